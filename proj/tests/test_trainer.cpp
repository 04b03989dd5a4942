/*
 * Copyright 2026 The snle-evidence Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "snle/errors.hpp"
#include "snle/flows.hpp"
#include "snle/trainer.hpp"

using namespace snle;
using namespace snle::train;
using snle::ad::Matrix;
using snle::flows::Architecture;
using snle::flows::Flow;
using snle::flows::FlowConfig;

namespace {

Dataset indexed_dataset(std::size_t n)
{
    Matrix ctx(n, 1);
    Matrix data(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        ctx(i, 0) = static_cast<double>(i);
        data(i, 0) = static_cast<double>(i) + 0.5;
    }
    return Dataset{ctx, data};
}

Dataset gaussian_benchmark(std::size_t n, std::uint64_t seed)
{
    // theta ~ U[-2, 2], x = theta + N(0, 1); context scaled to [-1, 1].
    Rng rng(seed);
    Matrix ctx(n, 1);
    Matrix data(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = -2.0 + 4.0 * uniform01(rng);
        ctx(i, 0) = t;
        data(i, 0) = t + standard_normal(rng);
    }
    return Dataset{ctx, data};
}

Flow conditional_flow(std::uint64_t seed)
{
    Flow f(FlowConfig{Architecture::MAF, 1, 1, 2, {16, 16}}, seed);
    f.set_context_standardization({0.0}, {2.0});
    return f;
}

}  // namespace

TEST_CASE("split sizes follow the ceiling rule")
{
    Rng rng(1);
    auto [tr, va] = split_train_val(indexed_dataset(1000), 0.1, rng);
    CHECK(tr.size() == 900);
    CHECK(va.size() == 100);
    auto [tr10, va10] = split_train_val(indexed_dataset(10), 0.1, rng);
    CHECK(tr10.size() == 9);
    CHECK(va10.size() == 1);
    auto [tr15, va15] = split_train_val(indexed_dataset(15), 0.1, rng);
    CHECK(tr15.size() == 14);
    CHECK(va15.size() == 1);
}

TEST_CASE("split is a disjoint exhaustive permutation")
{
    Rng rng(2);
    const Dataset d = indexed_dataset(237);
    auto [tr, va] = split_train_val(d, 0.25, rng);
    std::vector<double> seen;
    for (const Dataset* part : {&tr, &va}) {
        for (std::size_t i = 0; i < part->size(); ++i) {
            // Records stay paired.
            CHECK(part->data(i, 0) == part->context(i, 0) + 0.5);
            seen.push_back(part->context(i, 0));
        }
    }
    std::vector<double> sorted = seen;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == d.context.data());
    // Not the identity order.
    CHECK(seen != d.context.data());
}

TEST_CASE("split rejects small datasets and bad fractions")
{
    Rng rng(3);
    CHECK_THROWS_AS(split_train_val(indexed_dataset(9), 0.1, rng), ConfigError);
    CHECK_THROWS_AS(split_train_val(indexed_dataset(100), 0.0, rng), ConfigError);
    CHECK_THROWS_AS(split_train_val(indexed_dataset(100), 1.0, rng), ConfigError);
}

TEST_CASE("config validation")
{
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.patience = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.validation_fraction = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("Adam minimizes a quadratic")
{
    ad::ParamSet p;
    p.add("w", Matrix(1, 2, {3.0, -2.0}));
    Adam opt(0.05);
    for (int i = 0; i < 2000; ++i) {
        ad::Gradients g;
        g["w"] = Matrix(1, 2, {2.0 * p.at("w")(0, 0), 2.0 * p.at("w")(0, 1)});
        opt.step(p, g);
    }
    CHECK(std::abs(p.at("w")(0, 0)) < 1e-3);
    CHECK(std::abs(p.at("w")(0, 1)) < 1e-3);
}

TEST_CASE("standard normal data: trained log_prob(0) is close to -0.919")
{
    Rng data_rng(11);
    Matrix x(5000, 1);
    for (double& v : x.data()) {
        v = standard_normal(data_rng);
    }
    Flow f(FlowConfig{Architecture::MAF, 1, 0, 2, {16, 16}}, 5);
    Rng rng(12);
    const TrainReport r = fit_mle(f, Dataset::unconditional(x), TrainConfig{}, rng);
    const double target = -0.5 * std::log(2.0 * std::numbers::pi);
    CHECK(target == doctest::Approx(-0.919).epsilon(1e-3));
    CHECK(std::abs(f.log_prob(Matrix(1, 1, 0.0))[0] - target) < 0.05);
    CHECK(!r.epochs.empty());
}

TEST_CASE("conditional flow tracks the conditional mean")
{
    Flow f = conditional_flow(3);
    Rng rng(4);
    TrainConfig cfg;
    cfg.learning_rate = 2e-3;
    fit_mle(f, gaussian_benchmark(2000, 21), cfg, rng);
    Rng held(99);
    for (int i = 0; i < 20; ++i) {
        const double t = -1.8 + 3.6 * uniform01(held);
        const Matrix ctx(1, 1, t);
        const double at_mean = f.log_prob(Matrix(1, 1, t), &ctx)[0];
        const double far = f.log_prob(Matrix(1, 1, t + 3.0), &ctx)[0];
        CHECK(at_mean > far);
    }
}

TEST_CASE("zero learning rate with patience 1 stops after exactly 2 epochs")
{
    Flow f = conditional_flow(1);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.patience = 1;
    Rng rng(5);
    const TrainReport r = fit_mle(f, gaussian_benchmark(300, 1), cfg, rng);
    CHECK(r.epochs.size() == 2);
    CHECK(r.stopped_early);
    CHECK(r.best_epoch == 0);
}

TEST_CASE("report invariants: best epoch, early-stopping bound, epoch-0 improvement")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Flow f = conditional_flow(seed);
        TrainConfig cfg;
        cfg.max_epochs = 150;
        Rng rng(derive_seed(seed, {tag("train")}));
        const Dataset d = gaussian_benchmark(1000, seed + 100);
        const TrainReport r = fit_mle(f, d, cfg, rng);
        REQUIRE(!r.epochs.empty());
        double best = r.epochs.front().val_nll;
        for (const auto& e : r.epochs) {
            best = std::min(best, e.val_nll);
        }
        CHECK(r.best_val_nll == best);
        CHECK(r.epochs[r.best_epoch].val_nll == best);
        CHECK(r.epochs.size() <= r.best_epoch + cfg.patience + 1);
        CHECK(r.epochs[r.best_epoch].train_nll <= r.epochs.front().train_nll);
        CHECK(r.best_val_nll <= r.initial_val_nll);
        // The restored flow is the best-epoch flow.
        Rng split_rng(derive_seed(seed, {tag("train")}));
        auto [tr, va] = split_train_val(d, cfg.validation_fraction, split_rng);
        CHECK(mean_nll(f, va) == doctest::Approx(r.best_val_nll).epsilon(1e-12));
    }
}

TEST_CASE("training is deterministic given the seed")
{
    const Dataset d = gaussian_benchmark(500, 8);
    TrainConfig cfg;
    cfg.max_epochs = 30;
    Flow a = conditional_flow(2);
    Flow b = conditional_flow(2);
    Rng ra(77);
    Rng rb(77);
    const TrainReport r1 = fit_mle(a, d, cfg, ra);
    const TrainReport r2 = fit_mle(b, d, cfg, rb);
    CHECK(r1 == r2);
    CHECK(a.params() == b.params());
    CHECK(r1.to_csv().rfind("epoch,train_nll,val_nll\n", 0) == 0);
}

TEST_CASE("persistent non-finite losses raise a divergence error")
{
    Flow f = conditional_flow(1);
    TrainConfig cfg;
    cfg.learning_rate = 1e300;
    cfg.batch_size = 10;
    Rng rng(1);
    CHECK_THROWS_AS(fit_mle(f, gaussian_benchmark(400, 2), cfg, rng), TrainingDivergence);
}

TEST_CASE("mismatched datasets are rejected")
{
    Flow f = conditional_flow(1);
    Rng rng(1);
    Dataset d = gaussian_benchmark(100, 1);
    d.data = Matrix(100, 2);
    CHECK_THROWS_AS(fit_mle(f, d, TrainConfig{}, rng), DimensionError);
    CHECK_THROWS_AS(fit_mle(f, Dataset{}, TrainConfig{}, rng), UsageError);
}
