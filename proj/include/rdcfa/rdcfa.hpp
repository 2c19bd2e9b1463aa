#pragma once

// Umbrella header for the multi-class anomaly detector.

#include "rdcfa/backbone.hpp"
#include "rdcfa/cfa_losses.hpp"
#include "rdcfa/checkpoint.hpp"
#include "rdcfa/config.hpp"
#include "rdcfa/data.hpp"
#include "rdcfa/descriptor.hpp"
#include "rdcfa/discriminator.hpp"
#include "rdcfa/error.hpp"
#include "rdcfa/evaluator.hpp"
#include "rdcfa/manifest.hpp"
#include "rdcfa/memory_bank.hpp"
#include "rdcfa/model.hpp"
#include "rdcfa/pipeline.hpp"
#include "rdcfa/resnet.hpp"
#include "rdcfa/scorer.hpp"
#include "rdcfa/tensor.hpp"
#include "rdcfa/trainer.hpp"
