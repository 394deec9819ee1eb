#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dualkit/module_tree.hpp"
#include "dualkit/optim.hpp"

namespace dualkit {

// Seeded input generators shared by the invariant suite, the benchmarks and
// the test suites.

Matrix random_gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// rows x cols (cols <= rows) with orthonormal columns, built by modified
/// Gram-Schmidt with re-orthogonalization; independent of the SVD path.
Matrix random_orthonormal(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// Random matrix with geometrically spread singular values and condition
/// number `condition`, sigma_max = 1.
Matrix random_conditioned(std::size_t rows, std::size_t cols, double condition,
                          std::mt19937_64& rng);

/// Like random_conditioned but only `rank` nonzero singular values.
Matrix random_rank_deficient(std::size_t rows, std::size_t cols, std::size_t rank,
                             double condition, std::mt19937_64& rng);

/// Random well-formed architecture with at most max_leaves leaves (weighted
/// atoms and bonds both count), exercising both combinators and all three
/// weighted atom kinds.
ModuleTree random_tree(std::mt19937_64& rng, int max_leaves);

/// The two reference architectures used by training configs and checks.
ModuleTree reference_mlp();  // Linear . ReLU . Linear . ReLU . Linear on R^4 -> R^2
ModuleTree reference_cnn();  // Linear . Flatten . ReLU . Conv2D . ReLU . Conv2D on 8x8x2

/// Independent evaluation of the dual norm by the weighted-sum
/// decomposition of the max combination, with exact-SVD nuclear norms at
/// the leaves. sensitivity_factor perturbs the composition prefactor and
/// exists so the mutation harness can verify the decomposition check has
/// teeth.
double dual_norm_reference(const ModuleTree& m, const GradTree& g,
                           double sensitivity_factor = 1.0);

struct CheckResult {
    std::string name;
    bool pass = false;
    double margin = 0.0;  // worst observed value of the check's metric
    std::string detail;
};

/// Knobs for the invariant suite. The mutation fields deliberately break an
/// implementation assumption so tests can confirm the corresponding check
/// fails; production runs leave them at 1.
struct CheckOptions {
    std::uint64_t seed = 0x5dc4a11dULL;
    double dualize_scale_mutation = 1.0;      // scales dualized trees in the unit-ball check
    double sensitivity_factor_mutation = 1.0; // perturbs the decomposition reference
};

CheckResult check_well_normed_atom(const std::string& name, const ModuleTree& atom_tree,
                                   const CheckOptions& opts);
CheckResult check_unit_ball_law(const CheckOptions& opts);
CheckResult check_dual_norm_decomposition(const CheckOptions& opts);
CheckResult check_pairing_bound(const CheckOptions& opts);
CheckResult check_prop1_optimality(const CheckOptions& opts);
CheckResult check_gradient_finite_difference(const CheckOptions& opts);

/// The full suite in a fixed order.
std::vector<CheckResult> run_invariant_suite(const CheckOptions& opts);

}  // namespace dualkit
