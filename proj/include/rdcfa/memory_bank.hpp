#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rdcfa/discriminator.hpp"
#include "rdcfa/error.hpp"
#include "rdcfa/tensor.hpp"

namespace rdcfa {

struct NeighborResult {
    std::vector<std::size_t> indices;  // ascending by distance, ties by index
    std::vector<double> distances;     // squared Euclidean, non-decreasing
};

/// Width of a bank/query vector: D', plus mean and covariance diagonal when
/// augmented.
inline std::size_t entry_width(std::size_t target_dim, std::size_t latent_dim, bool augmented) {
    return target_dim + (augmented ? 2 * latent_dim : 0);
}

/// [phi(p) | mu_Q(p) | exp(log_var(p))] when enabled, phi(p) otherwise.
inline Vector augment_feature(const Eigen::Ref<const Vector>& target, const Eigen::Ref<const Vector>& mu,
                              const Eigen::Ref<const Vector>& log_var, bool enabled) {
    if (!enabled) return target;
    if (mu.size() != log_var.size()) throw ShapeError("augment_feature: mean/log-variance size mismatch");
    Vector out(target.size() + 2 * mu.size());
    out << target, mu, log_var.array().exp().matrix();
    return out;
}

/// Column-wise augment_feature over every patch of an image.
inline Matrix augment_features(const Matrix& target, const GaussianField& field, bool enabled) {
    if (!enabled) return target;
    if (field.mu.cols() != target.cols()) throw ShapeError("augment_features: patch count mismatch");
    const auto d = target.rows();
    const auto m = field.mu.rows();
    Matrix out(d + 2 * m, target.cols());
    out.topRows(d) = target;
    out.middleRows(d, m) = field.mu;
    out.bottomRows(m) = field.log_var.array().exp().matrix();
    return out;
}

/// Memorized feature set C. Column b of entries() is bank vector c_b.
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(Matrix entries, bool augmented, std::size_t epoch_stamp = 0)
        : entries_(std::move(entries)), augmented_(augmented), epoch_stamp_(epoch_stamp) {
        if (entries_.cols() < 1) throw ShapeError("memory bank must hold at least one entry");
        if (!entries_.allFinite()) throw NumericError("memory bank holds non-finite entries");
    }

    std::size_t size() const { return static_cast<std::size_t>(entries_.cols()); }
    std::size_t width() const { return static_cast<std::size_t>(entries_.rows()); }
    bool augmented() const { return augmented_; }
    std::size_t epoch_stamp() const { return epoch_stamp_; }
    const Matrix& entries() const { return entries_; }
    auto entry(std::size_t b) const { return entries_.col(static_cast<Eigen::Index>(b)); }

    /// Exact top-n by squared Euclidean distance; ties go to the lower index.
    NeighborResult nearest(const Eigen::Ref<const Vector>& query, std::size_t n) const {
        if (static_cast<std::size_t>(query.size()) != width())
            throw ShapeError("nearest: query width " + std::to_string(query.size()) + " does not match bank width " +
                             std::to_string(width()));
        if (n < 1 || n > size())
            throw ShapeError("nearest: n=" + std::to_string(n) + " outside [1, " + std::to_string(size()) + "]");
        std::vector<double> dist(size());
        distances_to(query, dist);
        std::vector<std::size_t> order(size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto closer = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), closer);
        NeighborResult r;
        r.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
        r.distances.reserve(n);
        for (auto i : r.indices) r.distances.push_back(dist[i]);
        return r;
    }

    /// Squared distance to the closest entry.
    double min_distance(const Eigen::Ref<const Vector>& query) const {
        if (static_cast<std::size_t>(query.size()) != width()) throw ShapeError("min_distance: query width mismatch");
        std::vector<double> dist(size());
        distances_to(query, dist);
        return *std::min_element(dist.begin(), dist.end());
    }

private:
    void distances_to(const Eigen::Ref<const Vector>& query, std::span<double> out) const {
        const auto e = entries_.rows();
        const double* q = query.data();
        for (Eigen::Index b = 0; b < entries_.cols(); ++b) {
            const double* c = entries_.col(b).data();
            double acc = 0.0;
            for (Eigen::Index k = 0; k < e; ++k) {
                const double diff = q[k] - c[k];
                acc += diff * diff;
            }
            out[static_cast<std::size_t>(b)] = acc;
        }
    }

    Matrix entries_;  // E x B
    bool augmented_ = false;
    std::size_t epoch_stamp_ = 0;
};

/// Builds the bank as the per-class, per-location mean of the query vectors of
/// each class's training samples: B = Nc * T, class c occupying columns
/// [c*T, (c+1)*T). queries_of(i) returns the E x T query matrix of sample i.
template <class QueryFn>
MemoryBank build_memory_bank(std::span<const std::size_t> labels, std::size_t classes, QueryFn&& queries_of,
                             bool augmented, std::size_t epoch_stamp,
                             std::span<const std::string> class_names = {}) {
    if (labels.empty()) throw DataError("memory bank: empty training set");
    std::vector<Matrix> sums(classes);
    std::vector<std::size_t> counts(classes, 0);
    Eigen::Index width = -1, patches = -1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto l = labels[i];
        if (l >= classes) throw ShapeError("memory bank: label out of range");
        Matrix q = queries_of(i);
        if (width < 0) {
            width = q.rows();
            patches = q.cols();
        } else if (q.rows() != width || q.cols() != patches) {
            throw ShapeError("memory bank: samples disagree on query shape");
        }
        if (counts[l] == 0)
            sums[l] = std::move(q);
        else
            sums[l] += q;
        ++counts[l];
    }
    Matrix entries(width, patches * static_cast<Eigen::Index>(classes));
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) {
            const std::string name = c < class_names.size() ? class_names[c] : "#" + std::to_string(c);
            throw DataError("memory bank: class '" + name + "' has no training samples");
        }
        entries.middleCols(static_cast<Eigen::Index>(c) * patches, patches) = sums[c] / static_cast<double>(counts[c]);
    }
    return MemoryBank(std::move(entries), augmented, epoch_stamp);
}

/// Rebuilds the bank with current parameters and bumps the epoch stamp.
template <class QueryFn>
MemoryBank refresh_memory_bank(const MemoryBank& bank, std::span<const std::size_t> labels, std::size_t classes,
                               QueryFn&& queries_of, std::span<const std::string> class_names = {}) {
    MemoryBank next = build_memory_bank(labels, classes, std::forward<QueryFn>(queries_of), bank.augmented(),
                                        bank.epoch_stamp() + 1, class_names);
    if (next.size() != bank.size() || next.width() != bank.width())
        throw ShapeError("memory bank refresh changed the bank shape");
    return next;
}

}  // namespace rdcfa
