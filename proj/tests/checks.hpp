#pragma once

// Randomized gradient and oracle sweeps shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"

namespace checks {

using rdcfa::Matrix;
using rdcfa::Vector;

struct Sweep {
    std::size_t instances = 0;
    double worst = 0.0;  // largest relative error (or mismatch count)
    std::string note;

    void add(double err) {
        ++instances;
        worst = std::max(worst, err);
    }
};

constexpr double kMargin = 1e-3;

/// True when every query's first K+J+1 neighbour ranks are well separated and
/// no hinge sits near its kink.
inline bool away_from_kinks(const Matrix& q, const Matrix& bank, std::size_t K, std::size_t J, double r2, double alpha) {
    for (Eigen::Index t = 0; t < q.cols(); ++t) {
        const auto r = oracle::ranked(bank, q.col(t));
        for (std::size_t i = 0; i < K + J && i + 1 < r.size(); ++i)
            if (r[i + 1].first - r[i].first < kMargin) return false;
        for (std::size_t k = 0; k < K; ++k)
            if (std::abs(r[k].first - r2) < kMargin) return false;
        for (std::size_t j = K; j < K + J; ++j)
            if (std::abs(r2 - r[j].first - alpha) < kMargin) return false;
    }
    return true;
}

/// Attraction and repulsion gradients with respect to the queries. Each
/// instance: E <= 8, T <= 4 queries, a 12-entry bank, K = J = 2.
inline std::pair<Sweep, Sweep> hypersphere_gradients(std::size_t wanted, std::uint64_t seed) {
    Sweep att, rep;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> e_dist(2, 8), t_dist(1, 4);
    const std::size_t K = 2, J = 2;
    while (att.instances < wanted) {
        const auto e = e_dist(rng), t = t_dist(rng);
        Matrix bank_m = oracle::random_matrix(e, 12, rng);
        Matrix q = oracle::random_matrix(e, t, rng);
        // Radii placed between neighbour ranks of the first query so each
        // hinge is active for part of the neighbours.
        const auto r0 = oracle::ranked(bank_m, q.col(0));
        const double r2_att = 0.5 * (r0[0].first + r0[1].first);
        const double r2_rep = 0.5 * (r0[2].first + r0[3].first) / 0.9;
        if (!away_from_kinks(q, bank_m, K, J, r2_att, 0.1 * r2_att) ||
            !away_from_kinks(q, bank_m, K, J, r2_rep, 0.1 * r2_rep))
            continue;
        const rdcfa::MemoryBank bank(bank_m, false);

        // Attraction alone: a huge margin switches repulsion off.
        const auto att_only = rdcfa::coupled_hypersphere_losses(q, bank, K, J, r2_att, 1e300);
        const Matrix n_att = oracle::numeric_gradient(q, [&] { return rdcfa::attract_loss(q, bank, K, r2_att); });
        // Repulsion: total minus the attraction part at the same radius.
        const double alpha = 0.1 * r2_rep;
        const auto both = rdcfa::coupled_hypersphere_losses(q, bank, K, J, r2_rep, alpha);
        const auto att_rep = rdcfa::coupled_hypersphere_losses(q, bank, K, J, r2_rep, 1e300);
        const Matrix g_rep = both.d_queries - att_rep.d_queries;
        const Matrix n_rep = oracle::numeric_gradient(q, [&] { return rdcfa::repel_loss(q, bank, K, J, r2_rep, alpha); });
        if (n_att.norm() == 0.0 || n_rep.norm() == 0.0) continue;
        att.add(oracle::relative_error(att_only.d_queries, n_att));
        rep.add(oracle::relative_error(g_rep, n_rep));
    }
    return {att, rep};
}

/// KL gradients with respect to every sample's mean and log-variance and the
/// class means. N <= 3 samples, m <= 4, T <= 4, Nc <= 3.
inline Sweep kld_gradients(std::size_t wanted, std::uint64_t seed) {
    Sweep s;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> small(1, 3), m_dist(1, 4), t_dist(1, 4);
    while (s.instances < wanted) {
        const auto n = small(rng), m = m_dist(rng), t = t_dist(rng), nc = small(rng);
        std::vector<rdcfa::GaussianField> fields(static_cast<std::size_t>(n));
        std::vector<std::size_t> labels;
        std::uniform_int_distribution<std::size_t> lab(0, static_cast<std::size_t>(nc - 1));
        for (auto& f : fields) {
            f.mu = oracle::random_matrix(m, t, rng);
            f.log_var = oracle::random_matrix(m, t, rng, 0.5);
            f.height = 1;
            f.width = static_cast<std::size_t>(t);
            labels.push_back(lab(rng));
        }
        rdcfa::ClassMeans means{oracle::random_matrix(nc, m, rng)};
        const auto g = rdcfa::kld_loss_with_gradient(fields, labels, means);
        auto loss = [&] { return oracle::kld(fields, labels, means.means); };
        double worst = oracle::relative_error(g.d_means, oracle::numeric_gradient(means.means, loss));
        for (std::size_t i = 0; i < fields.size(); ++i) {
            worst = std::max(worst, oracle::relative_error(g.d_mu[i], oracle::numeric_gradient(fields[i].mu, loss)));
            worst = std::max(worst,
                             oracle::relative_error(g.d_log_var[i], oracle::numeric_gradient(fields[i].log_var, loss)));
        }
        s.add(worst);
    }
    return s;
}

/// Distribution-repulsion gradient with respect to the class means, DM held
/// fixed. Nc <= 3 classes over N <= 4 samples, m <= 4.
inline Sweep repulsive_gradients(std::size_t wanted, std::uint64_t seed, double rho = 10.0) {
    Sweep s;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> nc_dist(2, 3), n_dist(2, 4), m_dist(1, 4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    while (s.instances < wanted) {
        const auto nc = nc_dist(rng), n = n_dist(rng), m = m_dist(rng);
        std::vector<std::size_t> labels;
        std::uniform_int_distribution<std::size_t> lab(0, static_cast<std::size_t>(nc - 1));
        for (int i = 0; i < n; ++i) labels.push_back(lab(rng));
        if (std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == labels[0]; })) continue;
        Matrix dm(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) dm(i, j) = dm(j, i) = i == j ? 0.0 : 0.1 + 0.9 * u(rng);
        rdcfa::ClassMeans means{oracle::random_matrix(nc, m, rng, 1.2)};
        bool near = false, active = false;
        for (int a = 0; a < nc; ++a)
            for (int b = 0; b < nc; ++b) {
                if (a == b) continue;
                const double gap = rho - (means.means.row(a) - means.means.row(b)).squaredNorm();
                near = near || std::abs(gap) < kMargin;
                active = active || gap > 0.0;
            }
        if (near || !active) continue;
        const auto g = rdcfa::repulsive_loss_with_gradient(means, labels, dm, rho);
        const Matrix num =
            oracle::numeric_gradient(means.means, [&] { return oracle::repulsion(means.means, labels, dm, rho); });
        s.add(oracle::relative_error(g.d_means, num));
    }
    return s;
}

/// Whole-model gradient of the batch loss with respect to every trainable
/// tensor (bank fixed, uniform DM). D'=5, m=3, T=4, Nc=2.
inline Sweep model_gradients(std::size_t wanted, std::uint64_t seed) {
    Sweep s;
    std::mt19937_64 rng(seed);
    std::uint64_t attempt = 0;
    while (s.instances < wanted) {
        rdcfa::TrainingSet set;
        set.class_names = {"a", "b"};
        for (std::size_t i = 0; i < 4; ++i) {
            rdcfa::PatchFeatureMap f;
            f.data = oracle::random_matrix(6, 4, rng);
            f.height = f.width = 2;
            set.features.push_back(f);
            set.labels.push_back(i % 2);
        }
        rdcfa::TrainConfig cfg;
        cfg.target_dim = 5;
        cfg.latent_dim = 3;
        cfg.flags.use_dissimilarity = false;
        cfg.cfa.K = 2;
        cfg.cfa.J = 2;
        cfg.cfa.rho = 4.0;
        auto model = rdcfa::RdCfaModel::create(rdcfa::model_dims(cfg, set), cfg.cfa.rho, ++attempt);
        const auto init = rdcfa::initialize_memory_bank(model, set);
        const rdcfa::MemoryBank bank(init.entries() + oracle::random_matrix(init.width(), init.size(), rng, 0.7), true);
        Matrix all_q(static_cast<Eigen::Index>(model.query_width()), 16);
        for (std::size_t i = 0; i < 4; ++i) all_q.middleCols(static_cast<Eigen::Index>(i) * 4, 4) = model.queries(set.features[i]);
        const auto r0 = oracle::ranked(bank.entries(), all_q.col(0));
        cfg.cfa.r2 = 0.5 * (r0[1].first + r0[3].first);
        cfg.cfa.alpha = 0.1 * cfg.cfa.r2;
        if (!away_from_kinks(all_q, bank.entries(), cfg.cfa.K, cfg.cfa.J, cfg.cfa.r2, cfg.cfa.alpha)) continue;

        const std::vector<std::size_t> batch{0, 1, 2, 3};
        auto result = rdcfa::batch_loss(model, bank, set, batch, cfg);
        auto params = model.parameters();
        auto grads = rdcfa::RdCfaModel::gradient_refs(result.gradients);
        double worst = 0.0;
        for (std::size_t p = 0; p < params.size(); ++p) {
            Eigen::Map<Matrix> value(params[p].value, static_cast<Eigen::Index>(params[p].size), 1);
            Matrix copy = value;
            Matrix num(copy.rows(), 1);
            const double h = 1e-6;
            for (Eigen::Index i = 0; i < copy.size(); ++i) {
                const double keep = value(i);
                value(i) = keep + h;
                const double up = rdcfa::batch_loss(model, bank, set, batch, cfg, false).loss.total;
                value(i) = keep - h;
                const double down = rdcfa::batch_loss(model, bank, set, batch, cfg, false).loss.total;
                value(i) = keep;
                num(i) = (up - down) / (2 * h);
            }
            const Eigen::Map<Matrix> analytic(grads[p].value, static_cast<Eigen::Index>(grads[p].size), 1);
            worst = std::max(worst, oracle::relative_error(analytic, num));
        }
        s.add(worst);
    }
    return s;
}

/// nearest() against a full scan; counts mismatching instances. A third of
/// the instances use integer-valued banks with duplicated entries to force ties.
inline Sweep nearest_oracle(std::size_t wanted, std::uint64_t seed) {
    Sweep s;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> b_dist(1, 256), e_dist(1, 6), small(-2, 2);
    std::size_t ties = 0;
    while (s.instances < wanted) {
        const auto b = b_dist(rng), e = e_dist(rng);
        const bool tie_case = s.instances % 3 == 0;
        Matrix bank(e, b);
        Vector q(e);
        if (tie_case) {
            for (Eigen::Index i = 0; i < bank.size(); ++i) bank.data()[i] = small(rng);
            if (b > 1) bank.col(b - 1) = bank.col(0);
            for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = small(rng);
        } else {
            bank = oracle::random_matrix(e, b, rng);
            q = oracle::random_matrix(e, 1, rng);
        }
        std::uniform_int_distribution<int> n_dist(1, b);
        const auto n = static_cast<std::size_t>(n_dist(rng));
        const rdcfa::MemoryBank mb(bank, false);
        const auto got = mb.nearest(q, n);
        const auto want = oracle::ranked(bank, q);
        bool ok = got.indices.size() == n && got.distances.size() == n;
        for (std::size_t i = 0; ok && i < n; ++i)
            ok = got.indices[i] == want[i].second && got.distances[i] == want[i].first;
        for (std::size_t i = 0; i + 1 < n; ++i)
            if (want[i].first == want[i + 1].first) {
                ++ties;
                break;
            }
        s.add(ok ? 0.0 : 1.0);
    }
    s.note = std::to_string(ties) + " instances with tied distances";
    return s;
}

/// auroc() against pair counting; worst absolute difference.
inline Sweep auroc_oracle(std::size_t wanted, std::uint64_t seed) {
    Sweep s;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> n_dist(2, 200), coarse(0, 9);
    std::normal_distribution<double> normal(0.0, 1.0);
    while (s.instances < wanted) {
        const auto n = static_cast<std::size_t>(n_dist(rng));
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        const bool coarse_scores = s.instances % 2 == 0;  // many ties
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng() % 2);
            scores[i] = coarse_scores ? coarse(rng) : normal(rng) + 0.7 * labels[i];
        }
        labels[0] = 0;
        labels[1] = 1;
        s.add(std::abs(rdcfa::auroc(scores, labels) - oracle::pair_auroc(scores, labels)));
    }
    return s;
}

/// dissimilarity_matrix() against the all-pairs oracle plus its structural
/// properties (symmetric, in [0,1], min 0, max 1); counts failing batches.
inline Sweep dissimilarity_oracle(std::size_t wanted, std::uint64_t seed) {
    Sweep s;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> n_dist(2, 4), hw(1, 3), m_dist(1, 4);
    while (s.instances < wanted) {
        const auto n = n_dist(rng), h = hw(rng), w = hw(rng), m = m_dist(rng);
        std::vector<rdcfa::GaussianField> fields(static_cast<std::size_t>(n));
        for (auto& f : fields) {
            f.mu = oracle::random_matrix(m, h * w, rng);
            f.log_var = Matrix::Zero(m, h * w);
            f.height = static_cast<std::size_t>(h);
            f.width = static_cast<std::size_t>(w);
        }
        const auto dm = rdcfa::dissimilarity_matrix(fields);
        const Matrix want = oracle::dissimilarity(fields);
        const Matrix& v = dm.values;
        bool ok = !dm.degenerate && (v - want).cwiseAbs().maxCoeff() < 1e-9 && (v - v.transpose()).cwiseAbs().maxCoeff() == 0.0 &&
                  v.minCoeff() >= 0.0 && v.maxCoeff() <= 1.0 && std::abs(v.minCoeff()) < 1e-12 &&
                  std::abs(v.maxCoeff() - 1.0) < 1e-12;
        s.add(ok ? 0.0 : 1.0);
    }
    return s;
}

}  // namespace checks
