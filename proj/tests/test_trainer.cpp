#include "noisylab/trainer.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "noisylab/noise_model.hpp"
#include "noisylab/synthetic_data.hpp"

using namespace noisylab;

namespace {

NoisyDataset separable_noiseless(std::size_t n, std::uint64_t seed) {
    const auto task = make_gaussian_task(4, 2, 8.0, 1.0, seed);
    const auto clean = sample_dataset(task, n, seed + 1);
    return NoisyDataset{clean.features, clean.y_true, clean.y_true};
}

Eigen::MatrixXd random_batch(std::size_t n, std::size_t d, Rng& rng) {
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = rng.normal();
    return X;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = rng.uniform_index(classes);
    return y;
}

} // namespace

TEST(CeLoss, Values) {
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(4);
    onehot[1] = 1.0;
    EXPECT_DOUBLE_EQ(ce_loss(onehot, 1), 0.0);

    const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(10, 0.1);
    EXPECT_NEAR(ce_loss(uniform, 3), std::log(10.0), 1e-12);

    EXPECT_NEAR(ce_loss(onehot, 0), -std::log(1e-12), 1e-9); // floored at the probability floor
    EXPECT_THROW(ce_loss(onehot, 9), ParameterError);
}

TEST(Model, ForwardIsNormalized) {
    Rng rng(3);
    for (auto arch : {Architecture::linear_softmax, Architecture::mlp_one_hidden}) {
        ModelConfig cfg{arch, 5, 4, 8};
        Model model(cfg, 11);
        const Eigen::MatrixXd X = random_batch(32, 5, rng);
        const Eigen::MatrixXd probs = model.predict_proba(X);
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            EXPECT_NEAR(probs.row(i).sum(), 1.0, 1e-9);
            for (Eigen::Index j = 0; j < probs.cols(); ++j) {
                EXPECT_GT(probs(i, j), 0.0);
                EXPECT_LT(probs(i, j), 1.0);
            }
        }
    }
}

TEST(Model, DeterministicInit) {
    ModelConfig cfg{Architecture::mlp_one_hidden, 4, 3, 16};
    Model a(cfg, 5), b(cfg, 5), c(cfg, 6);
    EXPECT_TRUE(a.params().isApprox(b.params(), 0.0));
    EXPECT_FALSE(a.params().isApprox(c.params()));
}

TEST(Model, CheckpointRoundTrip) {
    ModelConfig cfg{Architecture::mlp_one_hidden, 4, 3, 8};
    Model model(cfg, 7);
    const Model restored = Model::from_checkpoint(model.checkpoint());
    EXPECT_TRUE(restored.params().isApprox(model.params(), 0.0));
    EXPECT_EQ(restored.config().hidden_width, 8u);

    auto j = model.checkpoint();
    j["params"].erase(0);
    EXPECT_THROW(Model::from_checkpoint(j), ParameterError);
}

TEST(GradientCheck, LinearSoftmax) {
    Rng rng(13);
    ModelConfig cfg{Architecture::linear_softmax, 6, 4, 0};
    for (int trial = 0; trial < 5; ++trial) {
        Model model(cfg, 100 + trial);
        const Eigen::MatrixXd X = random_batch(6, 6, rng);
        const auto y = random_labels(6, 4, rng);
        EXPECT_TRUE(finite_diff_gradient_check(model, X, y, 1e-4));
    }
}

TEST(GradientCheck, MlpOneHidden) {
    Rng rng(17);
    ModelConfig cfg{Architecture::mlp_one_hidden, 5, 3, 8};
    for (int trial = 0; trial < 5; ++trial) {
        Model model(cfg, 200 + trial);
        const Eigen::MatrixXd X = random_batch(8, 5, rng);
        const auto y = random_labels(8, 3, rng);
        EXPECT_TRUE(finite_diff_gradient_check(model, X, y, 1e-3));
    }
}

TEST(GradientCheck, DetectsCorruptedGradient) {
    Rng rng(19);
    ModelConfig cfg{Architecture::linear_softmax, 4, 3, 0};
    Model model(cfg, 23);
    const Eigen::MatrixXd X = random_batch(4, 4, rng);
    const auto y = random_labels(4, 3, rng);

    Eigen::VectorXd analytic;
    batch_mean_ce_with_grad(model, X, y, analytic);
    const Eigen::VectorXd numeric = finite_diff_gradient(model, X, y);
    EXPECT_LE(max_relative_gradient_error(analytic, numeric), 1e-4);

    Eigen::VectorXd corrupted = analytic;
    Eigen::Index worst = 0;
    analytic.cwiseAbs().maxCoeff(&worst);
    corrupted[worst] *= 2.0;
    EXPECT_GT(max_relative_gradient_error(corrupted, numeric), 1e-4);
}

TEST(GradientCheck, RejectsLargeBatches) {
    ModelConfig cfg{Architecture::linear_softmax, 2, 2, 0};
    Model model(cfg, 1);
    const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(9, 2);
    const std::vector<std::size_t> y(9, 0);
    EXPECT_THROW(finite_diff_gradient_check(model, X, y, 1e-4), ParameterError);
}

TEST(TrainWarmup, LearnsSeparableTask) {
    const auto data = separable_noiseless(2000, 31);
    SGDConfig cfg = SGDConfig::warmup_default(50, 77);
    Model model(ModelConfig{Architecture::linear_softmax, 2, 4, 0}, 78);
    const auto result = train_warmup(data, std::move(model), cfg);
    EXPECT_GE(accuracy(result.model, data.features, data.y_true), 0.99);
}

TEST(TrainWarmup, SingleEpochLedgerShape) {
    const auto data = separable_noiseless(100, 41);
    SGDConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 5;
    const auto result =
        train_warmup(data, Model(ModelConfig{Architecture::linear_softmax, 2, 4, 0}, 6), cfg);
    EXPECT_EQ(result.ledger.epochs_recorded(), 1u);
    EXPECT_EQ(result.ledger.size(), 100u);
}

TEST(TrainWarmup, DeterministicLedger) {
    const auto data = separable_noiseless(300, 51);
    SGDConfig cfg = SGDConfig::warmup_default(5, 99);
    const auto a =
        train_warmup(data, Model(ModelConfig{Architecture::mlp_one_hidden, 2, 4, 16}, 1), cfg);
    const auto b =
        train_warmup(data, Model(ModelConfig{Architecture::mlp_one_hidden, 2, 4, 16}, 1), cfg);
    EXPECT_TRUE(a.ledger.losses().isApprox(b.ledger.losses(), 0.0)); // bit-identical
    EXPECT_TRUE(a.model.params().isApprox(b.model.params(), 0.0));
}

TEST(TrainWarmup, LedgerComplete) {
    const auto data = separable_noiseless(128, 61);
    SGDConfig cfg;
    cfg.epochs = 3;
    const auto result =
        train_warmup(data, Model(ModelConfig{Architecture::linear_softmax, 2, 4, 0}, 2), cfg);
    for (std::size_t i = 0; i < result.ledger.size(); ++i)
        for (std::size_t t = 0; t < result.ledger.epochs_recorded(); ++t)
            EXPECT_GE(result.ledger.loss(i, t), 0.0); // cells start at -1 until recorded
}

TEST(TrainWarmup, EpochLossNonIncreasingOnCleanData) {
    const auto data = separable_noiseless(500, 71);
    SGDConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 0.01; // small-lr regime
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.seed = 3;
    const auto result =
        train_warmup(data, Model(ModelConfig{Architecture::linear_softmax, 2, 4, 0}, 4), cfg);
    const auto mean_epoch_loss = [&](std::size_t t) {
        return result.ledger.losses().col(static_cast<Eigen::Index>(t)).mean();
    };
    for (std::size_t t = 1; t < cfg.epochs; ++t)
        EXPECT_LE(mean_epoch_loss(t), mean_epoch_loss(t - 1) + 1e-3);
}

TEST(TrainWarmup, DivergenceCarriesEpoch) {
    const auto data = separable_noiseless(64, 81);
    SGDConfig cfg;
    cfg.epochs = 10;
    cfg.learning_rate = 1e18;
    cfg.seed = 8;
    try {
        train_warmup(data, Model(ModelConfig{Architecture::mlp_one_hidden, 2, 4, 8}, 9), cfg);
        FAIL() << "expected divergence";
    } catch (const DivergedError& e) {
        EXPECT_GE(e.epoch(), 1u);
        EXPECT_LE(e.epoch(), 10u);
    }
}

TEST(TrainWarmup, RejectsBadInputs) {
    NoisyDataset empty;
    empty.features = Eigen::MatrixXd::Zero(0, 2);
    SGDConfig cfg;
    EXPECT_THROW(train_warmup(empty, Model(ModelConfig{Architecture::linear_softmax, 2, 4, 0}, 1), cfg),
                 ParameterError);
    SGDConfig bad;
    bad.epochs = 0;
    EXPECT_THROW(bad.validate(), ParameterError);
    SGDConfig bad_schedule;
    bad_schedule.epochs = 10;
    bad_schedule.lr_schedule = {{4, 0.1}, {4, 0.1}};
    EXPECT_THROW(bad_schedule.validate(), ParameterError);
}

TEST(LossLedger, MeanAndCumulative) {
    LossLedger ledger(2, 3);
    ledger.record(0, 0, 1.0);
    ledger.record(0, 1, 2.0);
    ledger.record(0, 2, 3.0);
    EXPECT_DOUBLE_EQ(ledger.mean_loss(0), 2.0);
    EXPECT_DOUBLE_EQ(mean_loss(ledger, 0), 2.0);

    LossLedger two(1, 2);
    two.record(0, 0, 4.0);
    two.record(0, 1, 2.0);
    const auto cumulative = two.cumulative_means(0);
    EXPECT_DOUBLE_EQ(cumulative[0], 4.0);
    EXPECT_DOUBLE_EQ(cumulative[1], 3.0);

    LossLedger constant(1, 4);
    for (std::size_t t = 0; t < 4; ++t) constant.record(0, t, 0.7);
    EXPECT_DOUBLE_EQ(constant.mean_loss(0), 0.7);

    EXPECT_THROW(ledger.mean_loss(5), LookupError);
    EXPECT_THROW(ledger.loss(0, 9), LookupError);
}

TEST(LossLedger, CsvShape) {
    LossLedger ledger(2, 2);
    ledger.record(0, 0, 0.5);
    ledger.record(0, 1, 1.5);
    ledger.record(1, 0, 2.5);
    ledger.record(1, 1, 3.5);
    EXPECT_EQ(ledger.to_csv(), "id,epoch_1,epoch_2\n0,0.5,1.5\n1,2.5,3.5\n");
}

TEST(SoftCeLoss, MatchesHardLabelOnOneHot) {
    Eigen::VectorXd probs(3);
    probs << 0.2, 0.5, 0.3;
    Eigen::VectorXd target = Eigen::VectorXd::Zero(3);
    target[1] = 1.0;
    EXPECT_DOUBLE_EQ(soft_ce_loss(probs, target), ce_loss(probs, 1));
}
