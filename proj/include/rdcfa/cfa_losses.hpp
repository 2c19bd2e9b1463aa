#pragma once

#include <cmath>
#include <string>

#include "rdcfa/error.hpp"
#include "rdcfa/memory_bank.hpp"
#include "rdcfa/tensor.hpp"

namespace rdcfa {

/// Coupled-hypersphere and regularization constants. r2 is the squared radius.
struct CfaConfig {
    std::size_t K = 3;
    std::size_t J = 3;
    double r2 = 1e-5;
    double alpha = 1e-6;
    double alpha_kl = 0.5;
    double alpha_dr = 0.1;
    double rho = 10.0;

    void validate() const {
        if (K < 1) throw ConfigError("cfa.K must be >= 1");
        if (J < 1) throw ConfigError("cfa.J must be >= 1");
        if (!(r2 > 0.0)) throw ConfigError("cfa.r2 must be > 0");
        if (!(alpha >= 0.0)) throw ConfigError("cfa.alpha must be >= 0");
        if (!(alpha_kl >= 0.0)) throw ConfigError("cfa.alpha_kl must be >= 0");
        if (!(alpha_dr >= 0.0)) throw ConfigError("cfa.alpha_dr must be >= 0");
        if (!(rho > 0.0)) throw ConfigError("cfa.rho must be > 0");
    }
};

struct LossBreakdown {
    double f_att = 0.0;
    double f_rep = 0.0;
    double kld = 0.0;
    double d_rep = 0.0;
    double total = 0.0;

    LossBreakdown& operator+=(const LossBreakdown& o) {
        f_att += o.f_att;
        f_rep += o.f_rep;
        kld += o.kld;
        d_rep += o.d_rep;
        total += o.total;
        return *this;
    }
    LossBreakdown& operator/=(double s) {
        f_att /= s;
        f_rep /= s;
        kld /= s;
        d_rep /= s;
        total /= s;
        return *this;
    }
    friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

/// total = alpha_kl * kld + alpha_dr * d_rep + f_att + f_rep.
inline LossBreakdown total_loss(double f_att, double f_rep, double kld, double d_rep, double alpha_kl,
                                double alpha_dr) {
    return {f_att, f_rep, kld, d_rep, alpha_kl * kld + alpha_dr * d_rep + f_att + f_rep};
}

/// Attraction and repulsion over a set of query columns, plus dL/d(query).
struct CoupledHypersphereTerms {
    double f_att = 0.0;
    double f_rep = 0.0;
    Matrix d_queries;  // E x n
};

/// One nearest(K+J) search per query: ranks 1..K attract, K+1..K+J repel.
/// Both terms are means over queries and neighbours.
inline CoupledHypersphereTerms coupled_hypersphere_losses(const Matrix& queries, const MemoryBank& bank,
                                                          std::size_t K, std::size_t J, double r2, double alpha) {
    if (static_cast<std::size_t>(queries.rows()) != bank.width())
        throw ShapeError("coupled-hypersphere loss: query width does not match bank width");
    if (K + J > bank.size())
        throw ShapeError("coupled-hypersphere loss: K+J=" + std::to_string(K + J) + " exceeds bank size " +
                         std::to_string(bank.size()));
    const auto n = queries.cols();
    CoupledHypersphereTerms out;
    out.d_queries = Matrix::Zero(queries.rows(), n);
    const double att_scale = 1.0 / (static_cast<double>(n) * static_cast<double>(K));
    const double rep_scale = 1.0 / (static_cast<double>(n) * static_cast<double>(J));
    for (Eigen::Index t = 0; t < n; ++t) {
        const auto nn = bank.nearest(queries.col(t), K + J);
        for (std::size_t k = 0; k < K; ++k) {
            const double excess = nn.distances[k] - r2;
            if (excess <= 0.0) continue;
            out.f_att += excess;
            out.d_queries.col(t) += 2.0 * att_scale * (queries.col(t) - bank.entry(nn.indices[k]));
        }
        for (std::size_t j = K; j < K + J; ++j) {
            const double slack = r2 - nn.distances[j] - alpha;
            if (slack <= 0.0) continue;
            out.f_rep += slack;
            out.d_queries.col(t) -= 2.0 * rep_scale * (queries.col(t) - bank.entry(nn.indices[j]));
        }
    }
    out.f_att *= att_scale;
    out.f_rep *= rep_scale;
    return out;
}

/// (1/(T*K)) * sum_t sum_{k<=K} max(0, D(q_t, c_t^k) - r^2).
inline double attract_loss(const Matrix& queries, const MemoryBank& bank, std::size_t K, double r2) {
    if (K < 1 || K > bank.size())
        throw ShapeError("attract_loss: K=" + std::to_string(K) + " outside [1, " + std::to_string(bank.size()) + "]");
    if (static_cast<std::size_t>(queries.rows()) != bank.width())
        throw ShapeError("attract_loss: query width does not match bank width");
    double sum = 0.0;
    for (Eigen::Index t = 0; t < queries.cols(); ++t) {
        const auto nn = bank.nearest(queries.col(t), K);
        for (double d : nn.distances) sum += std::max(0.0, d - r2);
    }
    return sum / (static_cast<double>(queries.cols()) * static_cast<double>(K));
}

/// (1/(T*J)) * sum_t sum_{j<=J} max(0, r^2 - D(q_t, c_t^{K+j}) - alpha).
inline double repel_loss(const Matrix& queries, const MemoryBank& bank, std::size_t K, std::size_t J, double r2,
                         double alpha) {
    if (J < 1 || K + J > bank.size())
        throw ShapeError("repel_loss: K+J=" + std::to_string(K + J) + " exceeds bank size " +
                         std::to_string(bank.size()));
    if (static_cast<std::size_t>(queries.rows()) != bank.width())
        throw ShapeError("repel_loss: query width does not match bank width");
    double sum = 0.0;
    for (Eigen::Index t = 0; t < queries.cols(); ++t) {
        const auto nn = bank.nearest(queries.col(t), K + J);
        for (std::size_t j = K; j < K + J; ++j) sum += std::max(0.0, r2 - nn.distances[j] - alpha);
    }
    return sum / (static_cast<double>(queries.cols()) * static_cast<double>(J));
}

}  // namespace rdcfa
