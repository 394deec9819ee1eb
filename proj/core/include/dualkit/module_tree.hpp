#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dualkit/atoms.hpp"
#include "dualkit/space.hpp"

namespace dualkit {

/// Activation value flowing through a module tree: a vector, an image, or a
/// pair of values (the output of a tuple module).
class Value {
public:
    Value() = default;
    static Value vec(std::vector<double> v);
    static Value image(Tensor3 t);
    static Value tuple(Value first, Value second);

    bool is_vec() const { return std::holds_alternative<std::vector<double>>(v_); }
    bool is_image() const { return std::holds_alternative<Tensor3>(v_); }
    bool is_tuple() const { return std::holds_alternative<TuplePtr>(v_); }

    const std::vector<double>& as_vec() const;
    const Tensor3& as_image() const;
    const Value& first() const;
    const Value& second() const;

private:
    using TuplePtr = std::shared_ptr<const std::pair<Value, Value>>;
    std::variant<std::monostate, std::vector<double>, Tensor3, TuplePtr> v_;
};

Value zero_value(const Space& s);
Value add_values(const Value& a, const Value& b);
Value scale_value(const Value& a, double c);

/// Immutable description of an architecture: atoms and bonds at the leaves,
/// binary composition and concatenation above them. Mass and sensitivity are
/// cached at every node; input/output spaces are checked at construction.
/// Handles are cheap to copy and safe to share across threads.
class ModuleTree {
public:
    enum class Kind { Atom, Composite, Tuple };

    ModuleTree() = default;

    static ModuleTree atom(AtomSpec spec);
    static ModuleTree linear(std::size_t d_out, std::size_t d_in, double mass);
    static ModuleTree embed(std::size_t d_out, std::size_t d_in, double mass);
    static ModuleTree conv2d(std::size_t d_out, std::size_t d_in, std::size_t k,
                             std::size_t in_width, std::size_t in_height, double mass);
    static ModuleTree relu(Space space);
    static ModuleTree flatten(std::size_t width, std::size_t height, std::size_t channels);

    /// Data flows through `first`, then `second`; requires
    /// first.output_space() == second.input_space().
    static ModuleTree composite(ModuleTree first, ModuleTree second);

    /// Both children consume the same input; requires matching input spaces.
    static ModuleTree tuple(ModuleTree first, ModuleTree second);

    Kind kind() const;
    const AtomSpec& atom_spec() const;
    const ModuleTree& first() const;
    const ModuleTree& second() const;

    double mass() const;
    double sensitivity() const;
    const Space& input_space() const;
    const Space& output_space() const;
    std::size_t leaf_count() const;

    bool operator==(const ModuleTree& other) const;  // structural equality

private:
    struct Node;
    explicit ModuleTree(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
    std::shared_ptr<const Node> node_;
};

/// Weights for a tree, one tensor per leaf in tree order (monostate at
/// bonds). Primal-typed: lives in the same space as the parameters.
class WeightTree {
public:
    WeightTree() = default;
    explicit WeightTree(std::vector<LeafTensor> leaves) : leaves_(std::move(leaves)) {}
    static WeightTree zeros_like(const ModuleTree& m);

    const std::vector<LeafTensor>& leaves() const { return leaves_; }
    std::vector<LeafTensor>& leaves() { return leaves_; }

    bool operator==(const WeightTree&) const = default;

private:
    std::vector<LeafTensor> leaves_;
};

/// Gradients for a tree. Dual-typed: a GradTree cannot be combined
/// additively with a WeightTree; it must pass through module_dualize (or be
/// paired via inner_product) first.
class GradTree {
public:
    GradTree() = default;
    explicit GradTree(std::vector<LeafTensor> leaves) : leaves_(std::move(leaves)) {}
    static GradTree zeros_like(const ModuleTree& m);

    const std::vector<LeafTensor>& leaves() const { return leaves_; }
    std::vector<LeafTensor>& leaves() { return leaves_; }

    bool operator==(const GradTree&) const = default;

private:
    std::vector<LeafTensor> leaves_;
};

void check_congruent(const ModuleTree& m, const WeightTree& w);
void check_congruent(const ModuleTree& m, const GradTree& g);

/// The recursive weighted-max norm over the tree's weight space. A
/// zero-mass child contributes a zero term to the max.
double module_norm(const ModuleTree& m, const WeightTree& w);

/// The recursive duality map: scaled leaf dualization with the composition
/// and concatenation prefactors. Throws ZeroMassGradientError when a
/// zero-mass subtree carries a nonzero gradient.
WeightTree module_dualize(const ModuleTree& m, const GradTree& g,
                          const IterationSchedule& schedule = IterationSchedule::standard());

/// Dual pairing <g, w>: the flattened inner product across leaves.
double inner_product(const GradTree& g, const WeightTree& w);

WeightTree axpy(const WeightTree& w, double alpha, const WeightTree& d);  // w + alpha * d
WeightTree scale_weights(const WeightTree& w, double c);
GradTree scale_grads(const GradTree& g, double c);
void accumulate(GradTree& into, const GradTree& g);

/// Per-leaf atom norms (zero at bonds), in tree order.
std::vector<double> leaf_norms(const ModuleTree& m, const WeightTree& w);

Value forward_eval(const ModuleTree& m, const WeightTree& w, const Value& x);

/// Forward-mode directional derivative: returns (y, dy) where dy is the
/// derivative of the output along (dw, dx). Exact for these atoms (all are
/// linear in their weights); ReLU uses the 1[x > 0] subgradient.
std::pair<Value, Value> forward_jvp(const ModuleTree& m, const WeightTree& w, const Value& x,
                                    const WeightTree& dw, const Value& dx);

struct BackwardResult {
    GradTree weight_grads;
    Value input_grad;
};
BackwardResult backward(const ModuleTree& m, const WeightTree& w, const Value& x,
                        const Value& upstream);

/// Norm on the module's input space (RMS for Linear inputs, l1 for Embed,
/// spatial max channel-RMS for images). Tuples use the first child.
double input_norm(const ModuleTree& m, const Value& x);

/// Norm on the module's output space; tuple outputs take the max of the
/// component norms.
double output_norm(const ModuleTree& m, const Value& y);

struct ProbeReport {
    int trials = 0;
    double max_weight_ratio = 0.0;
    double max_input_ratio = 0.0;
    int violations = 0;  // ratios above 1 + 1e-3
};

/// Samples weights and inputs in their unit balls and measures both
/// Lipschitz ratios through exact directional derivatives. Violations are
/// counted, not thrown.
ProbeReport well_normed_probe(const ModuleTree& m, int trials, std::uint64_t seed);

/// Smallest |entry| over every ReLU input reached while evaluating x.
/// Finite-difference oracles use this to keep test points away from the
/// kink. Returns +infinity when the tree has no ReLU bonds.
double min_relu_margin(const ModuleTree& m, const WeightTree& w, const Value& x);

// Seeded sampling helpers, shared by the probe, the invariant suite and the
// tests.
WeightTree random_weights(const ModuleTree& m, std::mt19937_64& rng);
GradTree random_gradients(const ModuleTree& m, std::mt19937_64& rng);
Value random_value(const Space& s, std::mt19937_64& rng);

// Architecture description files: JSON-compatible nested nodes with kind,
// dimensions and mass. parse(serialize(m)) reproduces m exactly.
ModuleTree parse_architecture(const std::string& text);
std::string serialize_architecture(const ModuleTree& m);
ModuleTree load_architecture(const std::string& path);
void save_architecture(const std::string& path, const ModuleTree& m);

}  // namespace dualkit
