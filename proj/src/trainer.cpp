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

#include "snle/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include "snle/errors.hpp"

namespace snle::train {

namespace {

constexpr std::size_t kMaxBadBatches = 5;

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows, std::size_t begin, std::size_t end)
{
    Matrix out(end - begin, m.cols());
    for (std::size_t r = begin; r < end; ++r) {
        const auto src = m.row_span(rows[r]);
        std::copy(src.begin(), src.end(), out.row_span(r - begin).begin());
    }
    return out;
}

void standardize_to_split(flows::Flow& flow, const Matrix& x)
{
    const std::size_t d = x.cols();
    std::vector<double> mean(d, 0.0);
    std::vector<double> sd(d, 0.0);
    const double n = static_cast<double>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            mean[c] += x(r, c) / n;
        }
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const double e = x(r, c) - mean[c];
            sd[c] += e * e / n;
        }
    }
    for (double& s : sd) {
        s = std::sqrt(s);
        if (!(s > 1e-12)) {
            s = 1.0;
        }
    }
    flow.set_data_standardization(std::move(mean), std::move(sd));
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const
{
    Dataset out;
    out.data = take_rows(data, rows, 0, rows.size());
    out.context = take_rows(context, rows, 0, rows.size());
    return out;
}

Dataset Dataset::unconditional(Matrix data)
{
    Dataset d;
    d.context = Matrix(data.rows(), 0);
    d.data = std::move(data);
    return d;
}

void TrainConfig::validate() const
{
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train: learning rate must be non-negative");
    }
    if (batch_size == 0) {
        throw ConfigError("train: batch size must be positive");
    }
    if (max_epochs == 0) {
        throw ConfigError("train: max epochs must be positive");
    }
    if (patience == 0) {
        throw ConfigError("train: patience must be at least 1");
    }
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("train: validation fraction must lie in (0, 1)");
    }
}

std::string TrainReport::to_csv() const
{
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_nll,val_nll\n";
    for (const auto& e : epochs) {
        os << e.epoch << ',' << e.train_nll << ',' << e.val_nll << '\n';
    }
    return os.str();
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, double fraction, Rng& rng)
{
    const std::size_t n = dataset.size();
    if (n < 10) {
        throw ConfigError("split_train_val: need at least 10 records, got " + std::to_string(n));
    }
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ConfigError("split_train_val: fraction must lie in (0, 1)");
    }
    if (dataset.context.rows() != n) {
        throw DimensionError("split_train_val: context and data row counts differ");
    }
    auto n_train = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * (1.0 - fraction) - 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> val_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return {dataset.subset(train_idx), dataset.subset(val_idx)};
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps)
{}

void Adam::step(ad::ParamSet& params, const ad::Gradients& grads)
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        const auto g_it = grads.find(name);
        if (g_it == grads.end()) {
            continue;
        }
        const Matrix& g = g_it->second;
        auto [m_it, _m] = m_.try_emplace(name, p.rows(), p.cols());
        auto [v_it, _v] = v_.try_emplace(name, p.rows(), p.cols());
        auto& m = m_it->second.data();
        auto& v = v_it->second.data();
        auto& w = p.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.data()[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

double mean_nll(const flows::Flow& flow, const Dataset& dataset)
{
    if (dataset.size() == 0) {
        throw UsageError("mean_nll: empty dataset");
    }
    const std::vector<double> lp =
        flow.log_prob(dataset.data, flow.conditional() ? &dataset.context : nullptr);
    double s = 0.0;
    for (double v : lp) {
        s -= v;
    }
    return s / static_cast<double>(lp.size());
}

TrainReport fit_mle(flows::Flow& flow, const Dataset& dataset, const TrainConfig& config, Rng& rng)
{
    config.validate();
    if (dataset.size() == 0) {
        throw UsageError("fit_mle: empty dataset");
    }
    if (dataset.data.cols() != flow.dim() || (flow.conditional() && dataset.context.cols() != flow.context_dim())) {
        throw DimensionError("fit_mle: dataset dimensions do not match the flow");
    }

    auto [train_set, val_set] = split_train_val(dataset, config.validation_fraction, rng);
    if (config.standardize_data) {
        standardize_to_split(flow, train_set.data);
    }

    const Matrix train_x = flow.standardize_data(train_set.data);
    const Matrix train_c = flow.conditional() ? flow.standardize_context(train_set.context) : Matrix();
    const double correction = flow.data_log_scale_sum();

    TrainReport report;
    report.initial_val_nll = mean_nll(flow, val_set);
    report.best_val_nll = std::numeric_limits<double>::infinity();

    Adam adam(config.learning_rate);
    ad::ParamSet best = flow.params();
    std::size_t since_best = 0;
    std::size_t bad_batches = 0;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            const Matrix bx = take_rows(train_x, order, begin, end);
            const Matrix bc = flow.conditional() ? take_rows(train_c, order, begin, end) : Matrix();

            double loss_value = std::numeric_limits<double>::quiet_NaN();
            ad::Gradients grads;
            try {
                ad::Tape tape;
                auto bindings = tape.bind(flow.params(), true);
                std::optional<ad::Var> ctx;
                if (flow.conditional()) {
                    ctx = tape.constant_ref(bc);
                }
                ad::Var lp = flow.log_prob_graph(tape, bindings, tape.constant_ref(bx), ctx);
                ad::Var loss = ad::scale(ad::mean(lp), -1.0);
                loss_value = loss.value()(0, 0);
                if (std::isfinite(loss_value)) {
                    tape.backward(loss);
                    grads = tape.gradients();
                }
            } catch (const DomainError&) {
                loss_value = std::numeric_limits<double>::quiet_NaN();
            }

            if (!std::isfinite(loss_value)) {
                if (++bad_batches >= kMaxBadBatches) {
                    throw TrainingDivergence("fit_mle: non-finite loss for " + std::to_string(kMaxBadBatches) +
                                             " consecutive batches at epoch " + std::to_string(epoch));
                }
                continue;
            }
            bad_batches = 0;
            adam.step(flow.params(), grads);
            loss_sum += (loss_value + correction) * static_cast<double>(end - begin);
            loss_count += end - begin;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_nll = loss_count > 0 ? loss_sum / static_cast<double>(loss_count)
                                       : std::numeric_limits<double>::quiet_NaN();
        rec.val_nll = mean_nll(flow, val_set);
        report.epochs.push_back(rec);

        if (rec.val_nll < report.best_val_nll) {
            report.best_val_nll = rec.val_nll;
            report.best_epoch = epoch;
            best = flow.params();
            since_best = 0;
        } else if (++since_best >= config.patience) {
            report.stopped_early = true;
            break;
        }
    }
    flow.params() = std::move(best);
    return report;
}

}  // namespace snle::train
