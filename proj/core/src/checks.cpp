#include "dualkit/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "dualkit/errors.hpp"
#include "dualkit/svd.hpp"

namespace dualkit {

// ------------------------------------------------------------ generators

Matrix random_gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(rows, cols);
    for (double& x : m.entries()) x = gauss(rng);
    return m;
}

Matrix random_orthonormal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    if (cols > rows) throw DimensionError("random_orthonormal: cols must not exceed rows");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> q(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        while (true) {
            std::vector<double> v(rows);
            for (double& x : v) x = gauss(rng);
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t i = 0; i < j; ++i) {
                    const double proj = dot(v, q[i]);
                    for (std::size_t t = 0; t < rows; ++t) v[t] -= proj * q[i][t];
                }
            }
            const double n = l2_norm(v);
            if (n > 1e-6) {
                for (double& x : v) x /= n;
                q[j] = std::move(v);
                break;
            }
        }
    }
    Matrix out(rows, cols);
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) out(i, j) = q[j][i];
    return out;
}

namespace {

Matrix compose_from_singular_values(std::size_t rows, std::size_t cols,
                                    const std::vector<double>& sigma, std::mt19937_64& rng) {
    const std::size_t r = std::min(rows, cols);
    const Matrix u = random_orthonormal(rows, r, rng);
    const Matrix v = random_orthonormal(cols, r, rng);
    Matrix out(rows, cols);
    for (std::size_t k = 0; k < r; ++k) {
        if (sigma[k] == 0.0) continue;
        for (std::size_t i = 0; i < rows; ++i) {
            const double us = u(i, k) * sigma[k];
            if (us == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) out(i, j) += us * v(j, k);
        }
    }
    return out;
}

}  // namespace

Matrix random_conditioned(std::size_t rows, std::size_t cols, double condition,
                          std::mt19937_64& rng) {
    if (condition < 1.0) throw DimensionError("random_conditioned: condition must be >= 1");
    const std::size_t r = std::min(rows, cols);
    std::vector<double> sigma(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double frac = r > 1 ? static_cast<double>(i) / static_cast<double>(r - 1) : 0.0;
        sigma[i] = std::pow(condition, -frac);
    }
    return compose_from_singular_values(rows, cols, sigma, rng);
}

Matrix random_rank_deficient(std::size_t rows, std::size_t cols, std::size_t rank,
                             double condition, std::mt19937_64& rng) {
    const std::size_t r = std::min(rows, cols);
    if (rank == 0 || rank > r) throw DimensionError("random_rank_deficient: bad rank");
    std::vector<double> sigma(r, 0.0);
    for (std::size_t i = 0; i < rank; ++i) {
        const double frac = rank > 1 ? static_cast<double>(i) / static_cast<double>(rank - 1) : 0.0;
        sigma[i] = std::pow(condition, -frac);
    }
    return compose_from_singular_values(rows, cols, sigma, rng);
}

// ------------------------------------------------------------ random_tree

namespace {

std::size_t rand_in(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    std::uniform_int_distribution<std::size_t> dist(lo, hi);
    return dist(rng);
}

ModuleTree random_atom_for(const Space& space, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mass_dist(0.3, 3.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (const auto* vs = std::get_if<VectorSpace>(&space)) {
        const std::size_t d_out = rand_in(rng, 2, 6);
        if (unit(rng) < 0.3) return ModuleTree::embed(d_out, vs->dim, mass_dist(rng));
        return ModuleTree::linear(d_out, vs->dim, mass_dist(rng));
    }
    const auto& img = std::get<ImageSpace>(space);
    const std::size_t k = std::min<std::size_t>(rand_in(rng, 1, 2), std::min(img.width, img.height));
    return ModuleTree::conv2d(rand_in(rng, 2, 4), img.channels, k, img.width, img.height,
                              mass_dist(rng));
}

// may_be_tuple is false for subtrees whose output feeds a composition,
// since nothing consumes product spaces.
ModuleTree gen_tree(const Space& space, int budget, bool may_be_tuple, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (budget <= 1) return random_atom_for(space, rng);

    const double r = unit(rng);
    if (may_be_tuple && r < 0.25) {
        const int left = 1 + static_cast<int>(rand_in(rng, 0, static_cast<std::size_t>(budget - 2)));
        return ModuleTree::tuple(gen_tree(space, left, true, rng),
                                 gen_tree(space, budget - left, true, rng));
    }
    if (r < 0.45) {
        ModuleTree body = gen_tree(space, budget - 1, false, rng);
        return ModuleTree::composite(body, ModuleTree::relu(body.output_space()));
    }
    const int left = 1 + static_cast<int>(rand_in(rng, 0, static_cast<std::size_t>(budget - 2)));
    ModuleTree first = gen_tree(space, left, false, rng);
    return ModuleTree::composite(first,
                                 gen_tree(first.output_space(), budget - left, may_be_tuple, rng));
}

}  // namespace

ModuleTree random_tree(std::mt19937_64& rng, int max_leaves) {
    if (max_leaves < 1) throw DimensionError("random_tree: max_leaves must be at least 1");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Space space;
    if (unit(rng) < 0.75) {
        space = VectorSpace{rand_in(rng, 2, 6)};
    } else {
        space = ImageSpace{rand_in(rng, 4, 6), rand_in(rng, 4, 6), rand_in(rng, 2, 3)};
    }
    const int budget = 1 + static_cast<int>(rand_in(rng, 0, static_cast<std::size_t>(max_leaves - 1)));
    return gen_tree(space, budget, true, rng);
}

ModuleTree reference_mlp() {
    ModuleTree net = ModuleTree::linear(16, 4, 1.0);
    net = ModuleTree::composite(net, ModuleTree::relu(VectorSpace{16}));
    net = ModuleTree::composite(net, ModuleTree::linear(16, 16, 1.0));
    net = ModuleTree::composite(net, ModuleTree::relu(VectorSpace{16}));
    net = ModuleTree::composite(net, ModuleTree::linear(2, 16, 1.0));
    return net;
}

ModuleTree reference_cnn() {
    ModuleTree net = ModuleTree::conv2d(4, 2, 3, 8, 8, 1.0);
    net = ModuleTree::composite(net, ModuleTree::relu(ImageSpace{6, 6, 4}));
    net = ModuleTree::composite(net, ModuleTree::conv2d(4, 4, 3, 6, 6, 1.0));
    net = ModuleTree::composite(net, ModuleTree::relu(ImageSpace{4, 4, 4}));
    net = ModuleTree::composite(net, ModuleTree::flatten(4, 4, 4));
    net = ModuleTree::composite(net, ModuleTree::linear(2, 64, 1.0));
    return net;
}

// --------------------------------------------- dual-norm decomposition

namespace {

double leaf_dual_norm(const AtomSpec& spec, const LeafTensor& leaf) {
    switch (spec.kind) {
        case AtomKind::Linear: {
            const auto& g = std::get<Matrix>(leaf);
            const double scale = std::sqrt(static_cast<double>(g.rows()) /
                                           static_cast<double>(g.cols()));
            return scale * nuclear_norm(svd_oracle(g));
        }
        case AtomKind::Embed: {
            const auto& g = std::get<Matrix>(leaf);
            const double root_d = std::sqrt(static_cast<double>(g.rows()));
            double acc = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) acc += root_d * l2_norm(column(g, j));
            return acc;
        }
        case AtomKind::Conv2D: {
            const auto& g = std::get<Tensor4>(leaf);
            const double scale = std::sqrt(static_cast<double>(g.d_out()) /
                                           static_cast<double>(g.d_in())) /
                                 static_cast<double>(g.k() * g.k());
            double acc = 0.0;
            for (std::size_t r = 0; r < g.k(); ++r)
                for (std::size_t c = 0; c < g.k(); ++c)
                    acc += scale * nuclear_norm(svd_oracle(g.kernel_slice(r, c)));
            return acc;
        }
        default:
            return 0.0;
    }
}

double dual_ref_rec(const ModuleTree& m, const std::vector<LeafTensor>& g, std::size_t& cursor,
                    double sensitivity_factor) {
    if (m.kind() == ModuleTree::Kind::Atom) return leaf_dual_norm(m.atom_spec(), g[cursor++]);

    const ModuleTree& m1 = m.first();
    const ModuleTree& m2 = m.second();
    const double d1 = dual_ref_rec(m1, g, cursor, sensitivity_factor);
    const double d2 = dual_ref_rec(m2, g, cursor, sensitivity_factor);
    const double total = m.mass();

    // Dual of a weighted max of norms is the weighted sum of duals with the
    // reciprocal weights.
    double acc = 0.0;
    if (m1.mass() > 0.0) {
        double inv_weight = m1.mass() / total;
        if (m.kind() == ModuleTree::Kind::Composite)
            inv_weight /= sensitivity_factor * m2.sensitivity();
        acc += inv_weight * d1;
    } else if (d1 != 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    if (m2.mass() > 0.0) {
        acc += (m2.mass() / total) * d2;
    } else if (d2 != 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return acc;
}

}  // namespace

double dual_norm_reference(const ModuleTree& m, const GradTree& g, double sensitivity_factor) {
    check_congruent(m, g);
    std::size_t cursor = 0;
    return dual_ref_rec(m, g.leaves(), cursor, sensitivity_factor);
}

// --------------------------------------------------------------- checks

namespace {

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", x);
    return buf;
}

}  // namespace

CheckResult check_well_normed_atom(const std::string& name, const ModuleTree& atom_tree,
                                   const CheckOptions& opts) {
    const ProbeReport report = well_normed_probe(atom_tree, 1000, opts.seed);
    const double worst = std::max(report.max_weight_ratio, report.max_input_ratio);
    CheckResult result;
    result.name = name;
    result.pass = report.violations == 0;
    result.margin = worst;
    result.detail = "max weight ratio " + format_double(report.max_weight_ratio) +
                    ", max input ratio " + format_double(report.max_input_ratio) + " over " +
                    std::to_string(report.trials) + " trials";
    return result;
}

CheckResult check_unit_ball_law(const CheckOptions& opts) {
    std::mt19937_64 rng(opts.seed ^ 0x1ba11ULL);
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        const ModuleTree m = random_tree(rng, 4);
        const GradTree g = random_gradients(m, rng);
        WeightTree d = module_dualize(m, g);
        if (opts.dualize_scale_mutation != 1.0)
            d = scale_weights(d, opts.dualize_scale_mutation);
        const double n = module_norm(m, d);
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    CheckResult result;
    result.name = "dualize_unit_ball";
    result.pass = lo >= 0.999 && hi <= 1.0;
    result.margin = std::max(1.0 - lo, hi - 1.0);
    result.detail = "norm of dualized gradients in [" + format_double(lo) + ", " +
                    format_double(hi) + "] over " + std::to_string(trials) + " trees";
    return result;
}

CheckResult check_dual_norm_decomposition(const CheckOptions& opts) {
    std::mt19937_64 rng(opts.seed ^ 0xdec0ULL);
    double worst = 0.0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        const ModuleTree m = random_tree(rng, 4);
        const GradTree g = random_gradients(m, rng);
        const double impl = dual_norm(m, g);
        const double ref = dual_norm_reference(m, g, opts.sensitivity_factor_mutation);
        const double rel = std::abs(impl - ref) / std::max(ref, 1e-300);
        worst = std::max(worst, rel);
    }
    CheckResult result;
    result.name = "dual_norm_decomposition";
    result.pass = worst <= 1e-4;
    result.margin = worst;
    result.detail = "max relative disagreement " + format_double(worst) + " against the " +
                    "weighted-sum reference over " + std::to_string(trials) + " trees";
    return result;
}

CheckResult check_pairing_bound(const CheckOptions& opts) {
    std::mt19937_64 rng(opts.seed ^ 0xbd00ULL);
    double worst = -std::numeric_limits<double>::infinity();
    const int trees = 10;
    const int samples = 10000;
    for (int t = 0; t < trees; ++t) {
        const ModuleTree m = random_tree(rng, 4);
        const GradTree g = random_gradients(m, rng);
        const double dual = dual_norm(m, g);
        for (int s = 0; s < samples; ++s) {
            WeightTree cand = random_weights(m, rng);
            const double n = module_norm(m, cand);
            if (n == 0.0) continue;
            cand = scale_weights(cand, 1.0 / n);
            worst = std::max(worst, inner_product(g, cand) - dual);
        }
    }
    CheckResult result;
    result.name = "dual_norm_pairing_bound";
    result.pass = worst <= 1e-9;
    result.margin = worst;
    result.detail = "max <g,t> - dual_norm over " + std::to_string(trees) + " trees x " +
                    std::to_string(samples) + " unit directions: " + format_double(worst);
    return result;
}

CheckResult check_prop1_optimality(const CheckOptions& opts) {
    std::mt19937_64 rng(opts.seed ^ 0x9209ULL);
    std::uniform_real_distribution<double> lambda_dist(0.5, 5.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int instances = 20;
    const int candidates = 100000;
    double worst_gap = std::numeric_limits<double>::infinity();
    double worst_violation = -std::numeric_limits<double>::infinity();

    // The objective uses the exact-SVD operator norm so candidate and
    // closed-form values are measured the same way.
    auto objective = [](const Matrix& g, const Matrix& dw, double lambda) {
        const double pairing = dot(g.entries(), dw.entries());
        const double scale = std::sqrt(static_cast<double>(dw.cols()) /
                                       static_cast<double>(dw.rows()));
        const double n = scale * svd_oracle(dw).sigma[0];
        return pairing + 0.5 * lambda * n * n;
    };

    for (int inst = 0; inst < instances; ++inst) {
        const std::size_t d_out = rand_in(rng, 2, 6);
        const std::size_t d_in = rand_in(rng, 2, 6);
        const ModuleTree m = ModuleTree::linear(d_out, d_in, 1.0);
        const Matrix g_mat = random_gaussian(d_out, d_in, rng);
        const double lambda = lambda_dist(rng);

        const GradTree g(std::vector<LeafTensor>{g_mat});
        const WeightTree w0 = WeightTree::zeros_like(m);
        const WeightTree stepped =
            steepest_step(m, w0, g, UpdateRule::sharpness_scaled(lambda));
        const Matrix& dw_star = std::get<Matrix>(stepped.leaves()[0]);
        const double j_star = objective(g_mat, dw_star, lambda);

        const double star_norm =
            std::sqrt(static_cast<double>(d_in) / static_cast<double>(d_out)) *
            svd_oracle(dw_star).sigma[0];
        double best = std::numeric_limits<double>::infinity();
        for (int c = 0; c < candidates; ++c) {
            Matrix dir = random_gaussian(d_out, d_in, rng);
            const double dn = std::sqrt(static_cast<double>(d_in) / static_cast<double>(d_out)) *
                              svd_oracle(dir).sigma[0];
            if (dn == 0.0) continue;
            const double target = unit(rng) * 2.0 * star_norm;
            dir = scaled(dir, target / dn);
            best = std::min(best, objective(g_mat, dir, lambda));
        }
        worst_gap = std::min(worst_gap, best - j_star);
        worst_violation = std::max(worst_violation, j_star - best);
    }
    CheckResult result;
    result.name = "prop1_random_search";
    result.pass = worst_violation <= 0.0;
    result.margin = worst_gap;
    result.detail = "closed-form minimizer beat " + std::to_string(candidates) +
                    " candidates on " + std::to_string(instances) +
                    " instances; smallest winning gap " + format_double(worst_gap);
    return result;
}

namespace {

std::vector<double> flatten_grads(const GradTree& g) {
    std::vector<double> out;
    for (const LeafTensor& leaf : g.leaves()) {
        if (const auto* m = std::get_if<Matrix>(&leaf)) {
            out.insert(out.end(), m->entries().begin(), m->entries().end());
        } else if (const auto* t = std::get_if<Tensor4>(&leaf)) {
            out.insert(out.end(), t->entries().begin(), t->entries().end());
        }
    }
    return out;
}

// Central finite differences of the dataset loss over every weight
// coordinate.
std::vector<double> finite_difference_grads(const ModuleTree& m, const WeightTree& w,
                                            const Dataset& data, double h) {
    std::vector<double> out;
    WeightTree probe = w;
    for (std::size_t leaf = 0; leaf < probe.leaves().size(); ++leaf) {
        std::span<double> entries;
        if (auto* mat = std::get_if<Matrix>(&probe.leaves()[leaf])) {
            entries = mat->entries();
        } else if (auto* t = std::get_if<Tensor4>(&probe.leaves()[leaf])) {
            entries = t->entries();
        } else {
            continue;
        }
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const double saved = entries[i];
            entries[i] = saved + h;
            const double up = dataset_loss(m, probe, data);
            entries[i] = saved - h;
            const double down = dataset_loss(m, probe, data);
            entries[i] = saved;
            out.push_back((up - down) / (2.0 * h));
        }
    }
    return out;
}

double gradient_check_one(const ModuleTree& arch, const Dataset& data, std::uint64_t seed) {
    const WeightTree w = init_weights(arch, seed);
    auto [loss, grads] = loss_and_gradient(arch, w, data);
    (void)loss;
    const std::vector<double> analytic = flatten_grads(grads);
    const std::vector<double> fd = finite_difference_grads(arch, w, data, 1e-4);
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - fd[i];
        diff += d * d;
        ref += fd[i] * fd[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-300);
}

// The finite-difference oracle is only valid away from ReLU kinks, so seeds
// whose preactivations sit within 2e-3 of zero are skipped deterministically
// (a +-1e-4 weight perturbation moves preactivations by a few 1e-4 at most).
bool config_is_fd_safe(const ModuleTree& arch, const Dataset& data, std::uint64_t seed) {
    const WeightTree w = init_weights(arch, seed);
    for (const Example& ex : data.examples) {
        if (min_relu_margin(arch, w, ex.input) < 2e-3) return false;
    }
    return true;
}

}  // namespace

CheckResult check_gradient_finite_difference(const CheckOptions& opts) {
    double worst = 0.0;
    int accepted = 0;

    struct Config {
        ModuleTree arch;
        Dataset data;
    };
    std::vector<Config> configs;
    {
        const ModuleTree mlp = reference_mlp();
        configs.push_back({mlp, make_teacher_regression(mlp, 6, opts.seed ^ 0xf1ULL)});
        const ModuleTree cnn = reference_cnn();
        configs.push_back({cnn, make_teacher_regression(cnn, 4, opts.seed ^ 0xf2ULL)});
        ModuleTree spiral_net = ModuleTree::linear(16, 2, 1.0);
        spiral_net = ModuleTree::composite(spiral_net, ModuleTree::relu(VectorSpace{16}));
        spiral_net = ModuleTree::composite(spiral_net, ModuleTree::linear(2, 16, 1.0));
        configs.push_back({spiral_net, make_spiral_classification(16, opts.seed ^ 0xf3ULL)});
    }

    for (const Config& config : configs) {
        int used = 0;
        for (std::uint64_t seed = opts.seed; used < 5; ++seed) {
            if (!config_is_fd_safe(config.arch, config.data, seed)) continue;
            worst = std::max(worst, gradient_check_one(config.arch, config.data, seed));
            ++used;
            ++accepted;
        }
    }

    CheckResult result;
    result.name = "gradient_finite_difference";
    result.pass = worst <= 1e-5;
    result.margin = worst;
    result.detail = "max relative error " + format_double(worst) + " over " +
                    std::to_string(accepted) + " seeded configurations at h = 1e-4";
    return result;
}

std::vector<CheckResult> run_invariant_suite(const CheckOptions& opts) {
    std::vector<CheckResult> results;
    results.push_back(
        check_well_normed_atom("well_normed_linear", ModuleTree::linear(8, 5, 1.0), opts));
    results.push_back(
        check_well_normed_atom("well_normed_embed", ModuleTree::embed(8, 5, 1.0), opts));
    results.push_back(check_well_normed_atom("well_normed_conv2d",
                                             ModuleTree::conv2d(4, 3, 2, 6, 6, 1.0), opts));
    results.push_back(
        check_well_normed_atom("well_normed_relu", ModuleTree::relu(VectorSpace{8}), opts));
    results.push_back(check_well_normed_atom("well_normed_mlp", reference_mlp(), opts));
    results.push_back(check_well_normed_atom("well_normed_cnn", reference_cnn(), opts));
    results.push_back(check_unit_ball_law(opts));
    results.push_back(check_dual_norm_decomposition(opts));
    results.push_back(check_pairing_bound(opts));
    results.push_back(check_prop1_optimality(opts));
    results.push_back(check_gradient_finite_difference(opts));
    return results;
}

}  // namespace dualkit
