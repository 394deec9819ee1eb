#include <doctest.h>

#include <cmath>
#include <random>

#include "dualkit/checks.hpp"
#include "dualkit/errors.hpp"
#include "dualkit/module_tree.hpp"
#include "dualkit/svd.hpp"

using namespace dualkit;

namespace {

// Matrix with RMS->RMS norm exactly `target`.
Matrix linear_with_norm(std::size_t d_out, std::size_t d_in, double target, std::mt19937_64& rng) {
    const Matrix q = random_orthonormal(std::max(d_out, d_in), std::min(d_out, d_in), rng);
    const Matrix semi = d_out >= d_in ? q : transpose(q);
    return scaled(semi, target * std::sqrt(static_cast<double>(d_out) / static_cast<double>(d_in)));
}

// Independent walk of the composition/concatenation norm rules, with
// exact-SVD leaf norms. Written against the definitions, not the library.
double norm_reference(const ModuleTree& m, const std::vector<LeafTensor>& leaves,
                      std::size_t& cursor) {
    if (m.kind() == ModuleTree::Kind::Atom) {
        const AtomSpec& spec = m.atom_spec();
        const LeafTensor& leaf = leaves[cursor++];
        switch (spec.kind) {
            case AtomKind::Linear: {
                const auto& w = std::get<Matrix>(leaf);
                return std::sqrt(static_cast<double>(w.cols()) / static_cast<double>(w.rows())) *
                       svd_oracle(w).sigma[0];
            }
            case AtomKind::Embed: {
                const auto& w = std::get<Matrix>(leaf);
                double best = 0.0;
                for (std::size_t j = 0; j < w.cols(); ++j)
                    best = std::max(best, rms_norm(column(w, j)));
                return best;
            }
            case AtomKind::Conv2D: {
                const auto& w = std::get<Tensor4>(leaf);
                double best = 0.0;
                for (std::size_t r = 0; r < w.k(); ++r)
                    for (std::size_t c = 0; c < w.k(); ++c)
                        best = std::max(best, std::sqrt(static_cast<double>(w.d_in()) /
                                                        static_cast<double>(w.d_out())) *
                                                  svd_oracle(w.kernel_slice(r, c)).sigma[0]);
                return static_cast<double>(w.k() * w.k()) * best;
            }
            default:
                return 0.0;
        }
    }
    const double n1 = norm_reference(m.first(), leaves, cursor);
    const double n2 = norm_reference(m.second(), leaves, cursor);
    const double total = m.first().mass() + m.second().mass();
    double t1 = 0.0, t2 = 0.0;
    if (m.first().mass() > 0.0) {
        t1 = total / m.first().mass() * n1;
        if (m.kind() == ModuleTree::Kind::Composite) t1 *= m.second().sensitivity();
    }
    if (m.second().mass() > 0.0) t2 = total / m.second().mass() * n2;
    return std::max(t1, t2);
}

}  // namespace

TEST_CASE("composite and tuple constructors enforce space compatibility") {
    const ModuleTree a = ModuleTree::linear(4, 3, 1.0);
    const ModuleTree b = ModuleTree::linear(2, 4, 1.0);
    const ModuleTree ab = ModuleTree::composite(a, b);
    CHECK(ab.input_space() == Space(VectorSpace{3}));
    CHECK(ab.output_space() == Space(VectorSpace{2}));

    CHECK_THROWS_AS(ModuleTree::composite(b, a), DimensionError);
    CHECK_THROWS_AS(ModuleTree::tuple(a, b), DimensionError);

    const ModuleTree t = ModuleTree::tuple(a, ModuleTree::linear(5, 3, 2.0));
    CHECK(t.mass() == doctest::Approx(3.0));
    CHECK(t.sensitivity() == doctest::Approx(2.0));
}

TEST_CASE("mass adds and sensitivity follows the combinator rules") {
    std::mt19937_64 rng(211);
    for (int trial = 0; trial < 50; ++trial) {
        const ModuleTree m = random_tree(rng, 6);
        // Mass equals the sum of leaf masses for arbitrary trees.
        double leaf_mass = 0.0;
        std::vector<const ModuleTree*> stack{&m};
        while (!stack.empty()) {
            const ModuleTree* node = stack.back();
            stack.pop_back();
            if (node->kind() == ModuleTree::Kind::Atom) {
                leaf_mass += node->atom_spec().mass;
            } else {
                stack.push_back(&node->first());
                stack.push_back(&node->second());
            }
        }
        CHECK(m.mass() == doctest::Approx(leaf_mass).epsilon(1e-12));
    }

    // A chain of sensitivity-1 atoms has sensitivity 1.
    const ModuleTree chain = ModuleTree::composite(
        ModuleTree::composite(ModuleTree::linear(3, 3, 1.0), ModuleTree::relu(VectorSpace{3})),
        ModuleTree::linear(2, 3, 1.0));
    CHECK(chain.sensitivity() == doctest::Approx(1.0));
}

TEST_CASE("module_norm on a two-linear composite matches the rule by hand") {
    std::mt19937_64 rng(223);
    const ModuleTree m =
        ModuleTree::composite(ModuleTree::linear(4, 4, 1.0), ModuleTree::linear(4, 4, 1.0));
    const WeightTree w(std::vector<LeafTensor>{linear_with_norm(4, 4, 0.3, rng),
                                               linear_with_norm(4, 4, 0.5, rng)});
    CHECK(module_norm(m, w) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("module_norm of all-zero weights is zero") {
    std::mt19937_64 rng(227);
    const ModuleTree m = random_tree(rng, 4);
    CHECK(module_norm(m, WeightTree::zeros_like(m)) == 0.0);
}

TEST_CASE("module_norm agrees with an independent definition walk") {
    std::mt19937_64 rng(229);
    for (int trial = 0; trial < 25; ++trial) {
        const ModuleTree m = random_tree(rng, 5);
        const WeightTree w = random_weights(m, rng);
        std::size_t cursor = 0;
        const double want = norm_reference(m, w.leaves(), cursor);
        CHECK(module_norm(m, w) == doctest::Approx(want).epsilon(1e-8));
    }
}

TEST_CASE("module_norm rejects incongruent weights") {
    const ModuleTree m = ModuleTree::linear(3, 2, 1.0);
    CHECK_THROWS_AS(module_norm(m, WeightTree(std::vector<LeafTensor>{Matrix(2, 3)})),
                    DimensionError);
    CHECK_THROWS_AS(module_norm(m, WeightTree(std::vector<LeafTensor>{})), DimensionError);
}

TEST_CASE("module_dualize of a single atom equals the atom's own map") {
    std::mt19937_64 rng(233);
    const ModuleTree m = ModuleTree::linear(4, 3, 2.5);
    const Matrix g = random_gaussian(4, 3, rng);
    const WeightTree d = module_dualize(m, GradTree(std::vector<LeafTensor>{g}));
    CHECK(frobenius_norm(subtract(std::get<Matrix>(d.leaves()[0]), linear_dualize(g))) == 0.0);
}

TEST_CASE("module_dualize halves each branch of an equal-mass tuple") {
    std::mt19937_64 rng(239);
    const double mu = 1.7;
    const ModuleTree m =
        ModuleTree::tuple(ModuleTree::linear(4, 3, mu), ModuleTree::linear(5, 3, mu));
    const Matrix g1 = random_gaussian(4, 3, rng);
    const Matrix g2 = random_gaussian(5, 3, rng);
    const WeightTree d = module_dualize(m, GradTree(std::vector<LeafTensor>{g1, g2}));
    CHECK(frobenius_norm(subtract(std::get<Matrix>(d.leaves()[0]),
                                  scaled(linear_dualize(g1), 0.5))) <= 1e-12);
    CHECK(frobenius_norm(subtract(std::get<Matrix>(d.leaves()[1]),
                                  scaled(linear_dualize(g2), 0.5))) <= 1e-12);
}

TEST_CASE("module_dualize pairing matches the dual-norm decomposition on deep trees") {
    std::mt19937_64 rng(241);
    for (int trial = 0; trial < 10; ++trial) {
        const ModuleTree m = random_tree(rng, 5);
        const GradTree g = random_gradients(m, rng);
        const double pairing = inner_product(g, module_dualize(m, g));
        const double want = dual_norm_reference(m, g);
        CHECK(pairing == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("zero-mass subtrees reject nonzero gradients and pass zero ones") {
    const ModuleTree m =
        ModuleTree::composite(ModuleTree::linear(3, 3, 0.0), ModuleTree::linear(2, 3, 1.0));
    std::mt19937_64 rng(251);

    GradTree bad(std::vector<LeafTensor>{random_gaussian(3, 3, rng), random_gaussian(2, 3, rng)});
    CHECK_THROWS_AS(module_dualize(m, bad), ZeroMassGradientError);

    GradTree ok(std::vector<LeafTensor>{Matrix(3, 3), random_gaussian(2, 3, rng)});
    const WeightTree d = module_dualize(m, ok);
    CHECK(is_zero(std::get<Matrix>(d.leaves()[0])));
    // The surviving branch keeps its full mass share.
    CHECK(frobenius_norm(subtract(std::get<Matrix>(d.leaves()[1]),
                                  linear_dualize(std::get<Matrix>(ok.leaves()[1])))) <= 1e-12);
}

TEST_CASE("unit ball law: dualized gradients have module norm just inside 1") {
    std::mt19937_64 rng(257);
    for (int trial = 0; trial < 40; ++trial) {
        const ModuleTree m = random_tree(rng, 4);
        const GradTree g = random_gradients(m, rng);
        const double n = module_norm(m, module_dualize(m, g));
        CHECK(n >= 0.999);
        CHECK(n <= 1.0);
    }
}

TEST_CASE("max decomposition: one nonzero leaf picks up its path prefactors") {
    std::mt19937_64 rng(263);
    // composite(pre, tuple(L0, L1)) with distinct masses; only L1 nonzero.
    const ModuleTree l0 = ModuleTree::linear(3, 2, 0.7);
    const ModuleTree l1 = ModuleTree::linear(3, 2, 1.9);
    const ModuleTree pre = ModuleTree::linear(2, 4, 0.9);
    const ModuleTree m = ModuleTree::composite(pre, ModuleTree::tuple(l0, l1));

    const double leaf_norm = 0.37;
    WeightTree w = WeightTree::zeros_like(m);
    w.leaves()[2] = linear_with_norm(3, 2, leaf_norm, rng);  // L1 sits at leaf index 2

    // Path product by hand: at the composite, the tuple is the second child
    // with mass 2.6 of 3.5 total; inside the tuple, L1 has mass 1.9 of 2.6.
    const double want = (3.5 / 2.6) * (2.6 / 1.9) * leaf_norm;
    CHECK(module_norm(m, w) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("dualize is invariant to positive gradient scaling") {
    std::mt19937_64 rng(269);
    const ModuleTree m = random_tree(rng, 3);
    const GradTree g = random_gradients(m, rng);
    const WeightTree a = module_dualize(m, g);
    const WeightTree b = module_dualize(m, scale_grads(g, 2.0));  // exact power of two
    CHECK(a == b);
    const WeightTree c = module_dualize(m, scale_grads(g, 3.7));
    for (std::size_t i = 0; i < a.leaves().size(); ++i) {
        if (const auto* ma = std::get_if<Matrix>(&a.leaves()[i])) {
            CHECK(frobenius_norm(subtract(*ma, std::get<Matrix>(c.leaves()[i]))) <= 1e-9);
        }
    }
}

TEST_CASE("composition is associative for sensitivity-1 chains") {
    std::mt19937_64 rng(271);
    const ModuleTree a = ModuleTree::linear(4, 3, 0.8);
    const ModuleTree b = ModuleTree::linear(5, 4, 1.4);
    const ModuleTree c = ModuleTree::linear(2, 5, 2.2);
    const ModuleTree left = ModuleTree::composite(ModuleTree::composite(a, b), c);
    const ModuleTree right = ModuleTree::composite(a, ModuleTree::composite(b, c));

    const WeightTree w(std::vector<LeafTensor>{random_gaussian(4, 3, rng),
                                               random_gaussian(5, 4, rng),
                                               random_gaussian(2, 5, rng)});
    CHECK(module_norm(left, w) == doctest::Approx(module_norm(right, w)).epsilon(1e-12));

    const GradTree g(std::vector<LeafTensor>{random_gaussian(4, 3, rng),
                                             random_gaussian(5, 4, rng),
                                             random_gaussian(2, 5, rng)});
    const WeightTree dl = module_dualize(left, g);
    const WeightTree dr = module_dualize(right, g);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(frobenius_norm(subtract(std::get<Matrix>(dl.leaves()[i]),
                                      std::get<Matrix>(dr.leaves()[i]))) <= 1e-12);
}

TEST_CASE("forward, jvp and backward agree on the reference networks") {
    std::mt19937_64 rng(277);
    for (const ModuleTree& m : {reference_mlp(), reference_cnn()}) {
        const WeightTree w = random_weights(m, rng);
        const Value x = random_value(m.input_space(), rng);
        const Value y = forward_eval(m, w, x);
        REQUIRE(y.is_vec());

        // jvp's primal output must match forward_eval.
        auto [y2, dy] = forward_jvp(m, w, x, WeightTree::zeros_like(m),
                                    zero_value(m.input_space()));
        for (std::size_t i = 0; i < y.as_vec().size(); ++i) {
            CHECK(y.as_vec()[i] == doctest::Approx(y2.as_vec()[i]).epsilon(1e-14));
            CHECK(dy.as_vec()[i] == 0.0);
        }

        // backward against a JVP pairing: <u, J dw> == <J^T u, dw>.
        const WeightTree dw = random_weights(m, rng);
        Value u = random_value(m.output_space(), rng);
        auto [y3, jdw] = forward_jvp(m, w, x, dw, zero_value(m.input_space()));
        const BackwardResult bw = backward(m, w, x, u);
        const double lhs = dot(u.as_vec(), jdw.as_vec());
        const double rhs = inner_product(bw.weight_grads, dw);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("well_normed_probe on bonds and atoms") {
    const ProbeReport relu_report = well_normed_probe(ModuleTree::relu(VectorSpace{8}), 200, 1);
    CHECK(relu_report.violations == 0);
    CHECK(relu_report.max_input_ratio <= 1.0 + 1e-12);

    const ProbeReport linear_report = well_normed_probe(ModuleTree::linear(6, 4, 1.0), 500, 2);
    CHECK(linear_report.violations == 0);
    CHECK(linear_report.max_weight_ratio <= 1.0 + 1e-3);
}

TEST_CASE("well_normed_probe on the MLP stays within tolerance over 1000 trials") {
    const ProbeReport report = well_normed_probe(reference_mlp(), 1000, 3);
    CHECK(report.violations == 0);
    CHECK(report.max_weight_ratio <= 1.0 + 1e-3);
    CHECK(report.max_input_ratio <= 1.0 + 1e-3);
}

TEST_CASE("architecture files round-trip exactly") {
    const ModuleTree cnn = reference_cnn();
    const std::string text = serialize_architecture(cnn);
    const ModuleTree back = parse_architecture(text);
    CHECK(back == cnn);
    CHECK(serialize_architecture(back) == text);

    std::mt19937_64 rng(281);
    for (int trial = 0; trial < 20; ++trial) {
        const ModuleTree m = random_tree(rng, 5);
        CHECK(parse_architecture(serialize_architecture(m)) == m);
    }
}

TEST_CASE("architecture parser reports bad input") {
    CHECK_THROWS_AS(parse_architecture("{ not json"), ParseError);
    CHECK_THROWS_AS(parse_architecture(R"({"kind":"mystery"})"), ParseError);
    CHECK_THROWS_AS(parse_architecture(R"({"kind":"linear","d_out":3})"), ParseError);
    // Shape-incompatible composite.
    CHECK_THROWS_AS(parse_architecture(R"({
        "kind": "composite",
        "first": {"kind": "linear", "d_out": 3, "d_in": 2, "mass": 1.0},
        "second": {"kind": "linear", "d_out": 2, "d_in": 5, "mass": 1.0}
    })"),
                    DimensionError);
}
