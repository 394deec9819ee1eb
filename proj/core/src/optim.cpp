#include "dualkit/optim.hpp"

#include <cmath>
#include <functional>
#include <numbers>

#include <nlohmann/json.hpp>

#include "dualkit/errors.hpp"
#include "dualkit/svd.hpp"

namespace dualkit {

UpdateRule UpdateRule::fixed_step(double eta, IterationSchedule schedule) {
    if (!(eta > 0.0)) throw DimensionError("fixed_step: eta must be positive");
    return UpdateRule{UpdateMode::FixedStep, eta, std::move(schedule)};
}

UpdateRule UpdateRule::sharpness_scaled(double lambda, IterationSchedule schedule) {
    // lambda = 0 would make the minimizer unbounded, so it is rejected even
    // though the steepest-descent identity formally allows it.
    if (!(lambda > 0.0)) throw DimensionError("sharpness_scaled: lambda must be positive");
    return UpdateRule{UpdateMode::SharpnessScaled, lambda, std::move(schedule)};
}

double dual_norm(const ModuleTree& m, const GradTree& g, const IterationSchedule& schedule) {
    return inner_product(g, module_dualize(m, g, schedule));
}

WeightTree steepest_step(const ModuleTree& m, const WeightTree& w, const GradTree& g,
                         const UpdateRule& rule) {
    check_congruent(m, w);
    const WeightTree direction = module_dualize(m, g, rule.schedule);
    const double step = rule.mode == UpdateMode::FixedStep
                            ? rule.value
                            : inner_product(g, direction) / rule.value;
    return axpy(w, -step, direction);
}

// ----------------------------------------------------------------- loss

namespace {

std::pair<double, std::vector<double>> loss_grad(const std::vector<double>& y,
                                                 const std::vector<double>& target,
                                                 LossKind kind) {
    if (y.size() != target.size()) throw DimensionError("loss: output/target size mismatch");
    const double d = static_cast<double>(y.size());
    if (kind == LossKind::MeanSquaredError) {
        double loss = 0.0;
        std::vector<double> grad(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double r = y[i] - target[i];
            loss += r * r;
            grad[i] = 2.0 * r / d;
        }
        return {loss / d, std::move(grad)};
    }
    // Softmax cross-entropy against a one-hot target.
    double max_logit = y[0];
    for (double v : y) max_logit = std::max(max_logit, v);
    double z = 0.0;
    for (double v : y) z += std::exp(v - max_logit);
    std::vector<double> grad(y.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = std::exp(y[i] - max_logit) / z;
        grad[i] = p - target[i];
        if (target[i] > 0.0) loss -= target[i] * (y[i] - max_logit - std::log(z));
    }
    return {loss, std::move(grad)};
}

}  // namespace

std::pair<double, GradTree> loss_and_gradient(const ModuleTree& m, const WeightTree& w,
                                              const Dataset& data) {
    if (data.examples.empty()) throw DimensionError("loss_and_gradient: empty dataset");
    GradTree total = GradTree::zeros_like(m);
    double loss = 0.0;
    for (const Example& ex : data.examples) {
        const Value y = forward_eval(m, w, ex.input);
        auto [l, dy] = loss_grad(y.as_vec(), ex.target, data.loss);
        loss += l;
        BackwardResult bw = backward(m, w, ex.input, Value::vec(std::move(dy)));
        accumulate(total, bw.weight_grads);
    }
    const double inv = 1.0 / static_cast<double>(data.examples.size());
    return {loss * inv, scale_grads(total, inv)};
}

double dataset_loss(const ModuleTree& m, const WeightTree& w, const Dataset& data) {
    if (data.examples.empty()) throw DimensionError("dataset_loss: empty dataset");
    double loss = 0.0;
    for (const Example& ex : data.examples) {
        const Value y = forward_eval(m, w, ex.input);
        loss += loss_grad(y.as_vec(), ex.target, data.loss).first;
    }
    return loss / static_cast<double>(data.examples.size());
}

// ----------------------------------------------------------------- init

namespace {

Matrix random_semi_orthogonal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix g(rows, cols);
    for (double& x : g.entries()) x = gauss(rng);
    return polar_factor(svd_oracle(g));
}

}  // namespace

WeightTree init_weights(const ModuleTree& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    WeightTree w = WeightTree::zeros_like(m);
    std::size_t idx = 0;

    // Walk leaves in tree order, mirroring zeros_like.
    std::vector<LeafTensor>& leaves = w.leaves();
    std::function<void(const ModuleTree&)> walk = [&](const ModuleTree& node) {
        if (node.kind() != ModuleTree::Kind::Atom) {
            walk(node.first());
            walk(node.second());
            return;
        }
        const AtomSpec& spec = node.atom_spec();
        switch (spec.kind) {
            case AtomKind::Linear: {
                const double scale = std::sqrt(static_cast<double>(spec.d_out) /
                                               static_cast<double>(spec.d_in));
                leaves[idx] = scaled(random_semi_orthogonal(spec.d_out, spec.d_in, rng), scale);
                break;
            }
            case AtomKind::Embed: {
                Matrix w0(spec.d_out, spec.d_in);
                for (std::size_t j = 0; j < spec.d_in; ++j) {
                    std::vector<double> col(spec.d_out);
                    for (double& x : col) x = gauss(rng);
                    const double r = rms_norm(col);
                    for (std::size_t i = 0; i < spec.d_out; ++i) w0(i, j) = col[i] / r;
                }
                leaves[idx] = std::move(w0);
                break;
            }
            case AtomKind::Conv2D: {
                Tensor4 t(spec.d_out, spec.d_in, spec.k, spec.k);
                const double scale = std::sqrt(static_cast<double>(spec.d_out) /
                                               static_cast<double>(spec.d_in)) /
                                     static_cast<double>(spec.k * spec.k);
                for (std::size_t r = 0; r < spec.k; ++r)
                    for (std::size_t c = 0; c < spec.k; ++c)
                        t.set_kernel_slice(
                            r, c, scaled(random_semi_orthogonal(spec.d_out, spec.d_in, rng), scale));
                leaves[idx] = std::move(t);
                break;
            }
            default:
                break;
        }
        ++idx;
    };
    walk(m);
    return w;
}

// ---------------------------------------------------------------- train

TrainResult train(const ModuleTree& m, const Dataset& data, const UpdateRule& rule, int steps,
                  std::uint64_t seed) {
    TrainResult result;
    WeightTree w = init_weights(m, seed);

    auto [loss, grad] = loss_and_gradient(m, w, data);
    TrainRecord initial;
    initial.step = 0;
    initial.loss = loss;
    result.records.push_back(std::move(initial));

    for (int t = 1; t <= steps; ++t) {
        if (!std::isfinite(loss) || loss > 1e6) {
            result.diverged = true;
            break;
        }
        const WeightTree direction = module_dualize(m, grad, rule.schedule);
        const double dual = inner_product(grad, direction);
        const double step_size =
            rule.mode == UpdateMode::FixedStep ? rule.value : dual / rule.value;
        const WeightTree update = scale_weights(direction, -step_size);

        TrainRecord record;
        record.step = t;
        record.has_update = true;
        record.dual_norm = dual;
        record.leaf_update_norms = leaf_norms(m, update);

        w = axpy(w, 1.0, update);
        std::tie(loss, grad) = loss_and_gradient(m, w, data);
        record.loss = loss;
        result.records.push_back(std::move(record));
    }
    if (!result.diverged && (!std::isfinite(loss) || loss > 1e6)) result.diverged = true;
    result.final_weights = std::move(w);
    return result;
}

std::string metrics_to_jsonl(const TrainResult& result) {
    using ordered_json = nlohmann::ordered_json;
    std::string out;
    {
        ordered_json header;
        header["schema"] = "dualkit.metrics.v1";
        out += header.dump() + "\n";
    }
    for (const TrainRecord& r : result.records) {
        ordered_json line;
        line["step"] = r.step;
        line["loss"] = r.loss;
        if (r.has_update) {
            line["dual_norm"] = r.dual_norm;
            line["leaf_update_norms"] = r.leaf_update_norms;
        }
        out += line.dump() + "\n";
    }
    if (result.diverged) {
        ordered_json line;
        line["event"] = "divergence_abort";
        out += line.dump() + "\n";
    }
    return out;
}

// ------------------------------------------------------------- datasets

Dataset make_teacher_regression(const ModuleTree& arch, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const WeightTree teacher = init_weights(arch, seed ^ 0x7ec4e55eedULL);
    Dataset data;
    data.loss = LossKind::MeanSquaredError;
    data.examples.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        Value x = random_value(arch.input_space(), rng);
        Value y = forward_eval(arch, teacher, x);
        data.examples.push_back(Example{std::move(x), y.as_vec()});
    }
    return data;
}

Dataset make_spiral_classification(int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    Dataset data;
    data.loss = LossKind::CrossEntropy;
    data.examples.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        const int cls = i % 2;
        const double t = static_cast<double>(i / 2) / std::max(1.0, static_cast<double>(size / 2));
        const double radius = 0.2 + 0.8 * t;
        const double angle = 3.0 * std::numbers::pi * t + (cls == 1 ? std::numbers::pi : 0.0);
        std::vector<double> x{radius * std::cos(angle) + noise(rng),
                              radius * std::sin(angle) + noise(rng)};
        std::vector<double> target(2, 0.0);
        target[static_cast<std::size_t>(cls)] = 1.0;
        data.examples.push_back(Example{Value::vec(std::move(x)), std::move(target)});
    }
    return data;
}

}  // namespace dualkit
