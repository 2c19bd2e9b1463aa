#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "checks.hpp"

using namespace rdcfa;

namespace {

GaussianField field(Matrix mu, Matrix log_var) {
    GaussianField f;
    f.height = 1;
    f.width = static_cast<std::size_t>(mu.cols());
    f.mu = std::move(mu);
    f.log_var = std::move(log_var);
    return f;
}

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

PatchFeatureMap random_features(std::size_t d, std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    PatchFeatureMap f;
    f.data = oracle::random_matrix(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h * w), rng);
    f.height = h;
    f.width = w;
    return f;
}

}  // namespace

// --- descriptor -------------------------------------------------------------

TEST(Descriptor, OutputShape) {
    PatchDescriptor desc({56, 32, false}, 0);
    const auto out = desc.describe(random_features(56, 16, 16, 1));
    EXPECT_EQ(out.dim(), 32u);
    EXPECT_EQ(out.data.cols(), 256);
    EXPECT_EQ(out.height, 16u);
}

TEST(Descriptor, IdentityPassesThrough) {
    const auto f = random_features(8, 3, 3, 2);
    const auto out = PatchDescriptor::identity(8).describe(f);
    EXPECT_EQ(out.data, f.data);
}

TEST(Descriptor, SharedWeightsAcrossLocations) {
    auto f = random_features(6, 2, 2, 3);
    f.data.col(3) = f.data.col(0);
    PatchDescriptor desc({6, 4, false}, 7);
    const auto out = desc.describe(f);
    EXPECT_EQ(out.data.col(3), out.data.col(0));
    // Per-location application of W p + b.
    for (Eigen::Index t = 0; t < 4; ++t)
        EXPECT_LT((out.data.col(t) - (desc.weight() * f.data.col(t) + desc.bias())).norm(), 1e-12);
}

TEST(Descriptor, CommutesWithPatchPermutation) {
    const auto f = random_features(5, 2, 3, 4);
    PatchDescriptor desc({5, 3, false}, 1);
    std::vector<Eigen::Index> perm{4, 2, 0, 5, 1, 3};
    PatchFeatureMap g = f;
    for (Eigen::Index t = 0; t < 6; ++t) g.data.col(t) = f.data.col(perm[static_cast<std::size_t>(t)]);
    const auto a = desc.describe(f), b = desc.describe(g);
    for (Eigen::Index t = 0; t < 6; ++t) EXPECT_EQ(b.data.col(t), a.data.col(perm[static_cast<std::size_t>(t)]));
}

TEST(Descriptor, CoordinateChannelsSpanUnitSquare) {
    PatchDescriptor desc({2, 2, true}, 0);
    const auto in = desc.input_matrix(random_features(2, 2, 2, 0));
    ASSERT_EQ(in.rows(), 4);
    EXPECT_DOUBLE_EQ(in(2, 0), -0.5);
    EXPECT_DOUBLE_EQ(in(2, 1), 0.5);
    EXPECT_DOUBLE_EQ(in(3, 0), -0.5);
    EXPECT_DOUBLE_EQ(in(3, 2), 0.5);
}

TEST(Descriptor, RejectsWrongWidth) {
    PatchDescriptor desc({8, 4, false}, 0);
    EXPECT_THROW(desc.describe(random_features(7, 2, 2, 0)), ShapeError);
}

// --- discriminator ----------------------------------------------------------

TEST(Discriminator, OutputShape) {
    Discriminator q(8, 4, 0);
    TargetFeatureMap t{Matrix::Random(8, 16), 4, 4};
    const auto f = q.discriminate(t);
    EXPECT_EQ(f.mu.rows(), 4);
    EXPECT_EQ(f.mu.cols(), 16);
    EXPECT_EQ(f.log_var.rows(), 4);
    EXPECT_EQ(f.log_var.cols(), 16);
}

TEST(Discriminator, BiasOnlyHeadsGiveIdentityCovariance) {
    Discriminator q(8, 4, 0);
    q.mu_weight().setZero();
    q.lv_weight().setZero();
    const auto f = q.discriminate({Matrix::Random(8, 5), 1, 5});
    EXPECT_EQ(f.mu, Matrix::Zero(4, 5));
    EXPECT_EQ(f.covariance_diagonal(), Matrix::Ones(4, 5));
}

TEST(Discriminator, PermutationEquivariant) {
    Discriminator q(3, 2, 5);
    const Matrix t = Matrix::Random(3, 4);
    Matrix p(3, 4);
    p << t.col(2), t.col(0), t.col(3), t.col(1);
    const auto a = q.discriminate({t, 2, 2}), b = q.discriminate({p, 2, 2});
    EXPECT_EQ(b.mu.col(0), a.mu.col(2));
    EXPECT_EQ(b.log_var.col(3), a.log_var.col(1));
}

// --- KL divergence ----------------------------------------------------------

TEST(Kld, ZeroAtClassMeanWithIdentityCovariance) {
    ClassMeans means{Matrix::Constant(1, 4, 0.3)};
    const auto f = field(Matrix::Constant(4, 9, 0.3), Matrix::Zero(4, 9));
    EXPECT_NEAR(kld_loss(f, 0, means), 0.0, 1e-12);
}

TEST(Kld, UnitOffset) {
    ClassMeans means{m1(0.0)};
    EXPECT_NEAR(kld_loss(field(m1(1.0), m1(0.0)), 0, means), 1.0, 1e-12);
}

TEST(Kld, DoubledVariance) {
    ClassMeans means{m1(0.0)};
    EXPECT_NEAR(kld_loss(field(m1(0.0), m1(std::log(2.0))), 0, means), 2.0 - std::log(2.0) - 1.0, 1e-12);
}

TEST(Kld, NonNegativeAndMatchesTraceForm) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 50; ++i) {
        std::vector<GaussianField> fields{field(oracle::random_matrix(3, 4, rng), oracle::random_matrix(3, 4, rng)),
                                          field(oracle::random_matrix(3, 4, rng), oracle::random_matrix(3, 4, rng))};
        std::vector<std::size_t> labels{0, 1};
        ClassMeans means{oracle::random_matrix(2, 3, rng)};
        const double v = kld_loss(fields, labels, means);
        EXPECT_GE(v, 0.0);
        EXPECT_NEAR(v, oracle::kld(fields, labels, means.means), 1e-10);
    }
}

TEST(Kld, RejectsBadLabel) {
    ClassMeans means{Matrix::Zero(2, 1)};
    EXPECT_THROW(kld_loss(field(m1(0), m1(0)), 2, means), ShapeError);
}

TEST(Kld, GradientsMatchFiniteDifferences) {
    const auto s = checks::kld_gradients(20, 1);
    EXPECT_LT(s.worst, 1e-4);
}

// --- dissimilarity matrix ---------------------------------------------------

TEST(Dissimilarity, TwoSampleHandCase) {
    std::vector<GaussianField> f{field(m1(0.0), m1(0.0)), field(m1(2.0), m1(0.0))};
    const auto dm = dissimilarity_matrix(f);
    EXPECT_FALSE(dm.degenerate);
    EXPECT_DOUBLE_EQ(dm.values(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(dm.values(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(dm.values(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(dm.values(1, 1), 0.0);
}

TEST(Dissimilarity, IdenticalMeansFallBackToOnes) {
    std::vector<GaussianField> f(3, field(Matrix::Constant(2, 4, 1.5), Matrix::Zero(2, 4)));
    const auto dm = dissimilarity_matrix(f);
    EXPECT_TRUE(dm.degenerate);
    EXPECT_EQ(dm.values, Matrix::Ones(3, 3));
}

TEST(Dissimilarity, MatchesAllPairsOracle) {
    const auto s = checks::dissimilarity_oracle(100, 2);
    EXPECT_EQ(s.worst, 0.0);
}

TEST(Dissimilarity, NeedsTwoSamples) {
    std::vector<GaussianField> f{field(m1(0.0), m1(0.0))};
    EXPECT_THROW(dissimilarity_matrix(f), ShapeError);
}

// --- distribution repulsion -------------------------------------------------

TEST(Repulsion, InactiveBeyondRho) {
    Matrix means(2, 1);
    means << 0.0, 5.0;
    const std::vector<std::size_t> labels{0, 1};
    EXPECT_DOUBLE_EQ(repulsive_loss({means}, labels, Matrix::Ones(2, 2), 10.0), 0.0);
}

TEST(Repulsion, HandCaseOverOrderedPairs) {
    Matrix means(2, 1);
    means << 0.0, 2.0;
    const std::vector<std::size_t> labels{0, 1};
    EXPECT_NEAR(repulsive_loss({means}, labels, Matrix::Ones(2, 2), 10.0), 7.2, 1e-12);
}

TEST(Repulsion, ZeroWeightsGiveZero) {
    std::mt19937_64 rng(3);
    const std::vector<std::size_t> labels{0, 1, 2, 1};
    EXPECT_DOUBLE_EQ(repulsive_loss({oracle::random_matrix(3, 2, rng, 0.1)}, labels, Matrix::Zero(4, 4), 10.0), 0.0);
}

TEST(Repulsion, SameClassPairsIgnored) {
    const std::vector<std::size_t> labels{1, 1, 1};
    EXPECT_DOUBLE_EQ(repulsive_loss({Matrix::Zero(2, 3)}, labels, Matrix::Ones(3, 3), 10.0), 0.0);
}

TEST(Repulsion, MatchesOracle) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 30; ++i) {
        const Matrix means = oracle::random_matrix(3, 2, rng, 1.5);
        const std::vector<std::size_t> labels{0, 2, 1, 2};
        Matrix dm = (Matrix::Random(4, 4).array() + 1.0) / 2.0;
        dm = (dm + dm.transpose()) / 2.0;
        EXPECT_NEAR(repulsive_loss({means}, labels, dm, 10.0), oracle::repulsion(means, labels, dm, 10.0), 1e-12);
    }
}

TEST(Repulsion, GradientsMatchFiniteDifferences) {
    const auto s = checks::repulsive_gradients(20, 3);
    EXPECT_LT(s.worst, 1e-4);
}

// --- coupled hyperspheres ---------------------------------------------------

TEST(Attract, ZeroOnSelfMatch) {
    std::mt19937_64 rng(1);
    const Matrix bank = oracle::random_matrix(3, 5, rng);
    EXPECT_DOUBLE_EQ(attract_loss(bank, MemoryBank(bank, false), 1, 1e-5), 0.0);
}

TEST(Attract, HandCase) {
    Matrix bank(2, 1), q(2, 1);
    bank << 3.0, 4.0;
    q << 0.0, 0.0;
    EXPECT_DOUBLE_EQ(attract_loss(q, MemoryBank(bank, false), 1, 1.0), 24.0);
}

TEST(Attract, InsideSphereIsZero) {
    std::mt19937_64 rng(2);
    const Matrix bank = oracle::random_matrix(3, 6, rng, 0.1);
    const Matrix q = oracle::random_matrix(3, 4, rng, 0.1);
    EXPECT_DOUBLE_EQ(attract_loss(q, MemoryBank(bank, false), 3, 100.0), 0.0);
}

TEST(Repel, HandCase) {
    // One query, K=1 self match at distance 0, hard negative at distance 0.25.
    Matrix bank(1, 2), q(1, 1);
    bank << 0.0, 0.5;
    q << 0.0;
    EXPECT_DOUBLE_EQ(repel_loss(q, MemoryBank(bank, false), 1, 1, 1.0, 0.5), 0.25);
}

TEST(Repel, FarNegativesAreZero) {
    Matrix bank(1, 3), q(1, 1);
    bank << 0.0, 10.0, -10.0;
    q << 0.0;
    EXPECT_DOUBLE_EQ(repel_loss(q, MemoryBank(bank, false), 1, 2, 1.0, 0.1), 0.0);
}

TEST(Repel, MarginDominatingRadiusGivesZero) {
    std::mt19937_64 rng(4);
    const Matrix bank = oracle::random_matrix(2, 8, rng);
    const Matrix q = oracle::random_matrix(2, 3, rng);
    EXPECT_DOUBLE_EQ(repel_loss(q, MemoryBank(bank, false), 2, 3, 0.5, 0.5), 0.0);
}

TEST(CoupledHyperspheres, MatchesOracles) {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 30; ++i) {
        const Matrix bank = oracle::random_matrix(4, 20, rng);
        const Matrix q = oracle::random_matrix(4, 5, rng);
        const MemoryBank mb(bank, false);
        const auto terms = coupled_hypersphere_losses(q, mb, 3, 3, 2.0, 0.2);
        EXPECT_NEAR(terms.f_att, oracle::attract(q, bank, 3, 2.0), 1e-12);
        EXPECT_NEAR(terms.f_rep, oracle::repel(q, bank, 3, 3, 2.0, 0.2), 1e-12);
        EXPECT_NEAR(terms.f_att, attract_loss(q, mb, 3, 2.0), 1e-12);
        EXPECT_NEAR(terms.f_rep, repel_loss(q, mb, 3, 3, 2.0, 0.2), 1e-12);
    }
}

TEST(CoupledHyperspheres, RejectsOversizedNeighbourhood) {
    const MemoryBank mb(Matrix::Zero(2, 4), false);
    EXPECT_THROW(coupled_hypersphere_losses(Matrix::Zero(2, 1), mb, 3, 2, 1.0, 0.1), ShapeError);
    EXPECT_THROW(coupled_hypersphere_losses(Matrix::Zero(3, 1), mb, 1, 1, 1.0, 0.1), ShapeError);
}

TEST(CoupledHyperspheres, GradientsMatchFiniteDifferences) {
    const auto [att, rep] = checks::hypersphere_gradients(20, 4);
    EXPECT_LT(att.worst, 1e-4);
    EXPECT_LT(rep.worst, 1e-4);
}

TEST(TotalLoss, WeightedSum) {
    EXPECT_NEAR(total_loss(3, 4, 1, 2, 0.5, 0.1).total, 7.7, 1e-12);
    EXPECT_DOUBLE_EQ(total_loss(0, 0, 0, 0, 0.5, 0.1).total, 0.0);
    EXPECT_DOUBLE_EQ(total_loss(2, 3, 9, 9, 0.0, 0.0).total, 5.0);
}

TEST(ModelGradient, BatchLossMatchesFiniteDifferences) {
    const auto s = checks::model_gradients(5, 7);
    EXPECT_LT(s.worst, 1e-4);
}
