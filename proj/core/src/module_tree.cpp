#include "dualkit/module_tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dualkit/errors.hpp"

namespace dualkit {

// ---------------------------------------------------------------- Value

Value Value::vec(std::vector<double> v) {
    Value out;
    out.v_ = std::move(v);
    return out;
}

Value Value::image(Tensor3 t) {
    Value out;
    out.v_ = std::move(t);
    return out;
}

Value Value::tuple(Value first, Value second) {
    Value out;
    out.v_ = std::make_shared<const std::pair<Value, Value>>(std::move(first), std::move(second));
    return out;
}

const std::vector<double>& Value::as_vec() const {
    if (!is_vec()) throw DimensionError("Value: expected a vector");
    return std::get<std::vector<double>>(v_);
}

const Tensor3& Value::as_image() const {
    if (!is_image()) throw DimensionError("Value: expected an image");
    return std::get<Tensor3>(v_);
}

const Value& Value::first() const {
    if (!is_tuple()) throw DimensionError("Value: expected a tuple");
    return std::get<TuplePtr>(v_)->first;
}

const Value& Value::second() const {
    if (!is_tuple()) throw DimensionError("Value: expected a tuple");
    return std::get<TuplePtr>(v_)->second;
}

Value zero_value(const Space& s) {
    if (const auto* v = std::get_if<VectorSpace>(&s)) {
        return Value::vec(std::vector<double>(v->dim, 0.0));
    }
    const auto& img = std::get<ImageSpace>(s);
    return Value::image(Tensor3(img.width, img.height, img.channels));
}

Value add_values(const Value& a, const Value& b) {
    if (a.is_vec() && b.is_vec()) {
        std::vector<double> out = a.as_vec();
        const auto& bv = b.as_vec();
        if (out.size() != bv.size()) throw DimensionError("add_values: size mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return Value::vec(std::move(out));
    }
    if (a.is_image() && b.is_image()) {
        Tensor3 out = a.as_image();
        const auto& bt = b.as_image();
        if (out.entries().size() != bt.entries().size())
            throw DimensionError("add_values: shape mismatch");
        auto os = out.entries();
        auto bs = bt.entries();
        for (std::size_t i = 0; i < os.size(); ++i) os[i] += bs[i];
        return Value::image(std::move(out));
    }
    if (a.is_tuple() && b.is_tuple()) {
        return Value::tuple(add_values(a.first(), b.first()), add_values(a.second(), b.second()));
    }
    throw DimensionError("add_values: kind mismatch");
}

Value scale_value(const Value& a, double c) {
    if (a.is_vec()) {
        std::vector<double> out = a.as_vec();
        for (double& x : out) x *= c;
        return Value::vec(std::move(out));
    }
    if (a.is_image()) {
        Tensor3 out = a.as_image();
        for (double& x : out.entries()) x *= c;
        return Value::image(std::move(out));
    }
    return Value::tuple(scale_value(a.first(), c), scale_value(a.second(), c));
}

// ----------------------------------------------------------- ModuleTree

struct ModuleTree::Node {
    Kind kind;
    AtomSpec spec;        // Atom only
    ModuleTree first;     // Composite/Tuple only
    ModuleTree second;
    double mass = 0.0;
    double sensitivity = 1.0;
    Space input;
    Space output;
    std::size_t leaf_count = 0;
};

ModuleTree ModuleTree::atom(AtomSpec spec) {
    auto node = std::make_shared<Node>();
    node->kind = Kind::Atom;
    node->mass = spec.mass;
    node->sensitivity = spec.sensitivity;
    node->input = spec.input_space();
    node->output = spec.output_space();
    node->leaf_count = 1;
    node->spec = std::move(spec);
    return ModuleTree(std::move(node));
}

ModuleTree ModuleTree::linear(std::size_t d_out, std::size_t d_in, double mass) {
    return atom(AtomSpec::linear(d_out, d_in, mass));
}
ModuleTree ModuleTree::embed(std::size_t d_out, std::size_t d_in, double mass) {
    return atom(AtomSpec::embed(d_out, d_in, mass));
}
ModuleTree ModuleTree::conv2d(std::size_t d_out, std::size_t d_in, std::size_t k,
                              std::size_t in_width, std::size_t in_height, double mass) {
    return atom(AtomSpec::conv2d(d_out, d_in, k, in_width, in_height, mass));
}
ModuleTree ModuleTree::relu(Space space) { return atom(AtomSpec::relu(space)); }
ModuleTree ModuleTree::flatten(std::size_t width, std::size_t height, std::size_t channels) {
    return atom(AtomSpec::flatten(width, height, channels));
}

ModuleTree ModuleTree::composite(ModuleTree first, ModuleTree second) {
    if (!first.node_ || !second.node_) throw DimensionError("composite: empty subtree");
    if (!(first.output_space() == second.input_space())) {
        throw DimensionError("composite: output space " + describe(first.output_space()) +
                             " does not match input space " + describe(second.input_space()));
    }
    auto node = std::make_shared<Node>();
    node->kind = Kind::Composite;
    node->mass = first.mass() + second.mass();
    node->sensitivity = first.sensitivity() * second.sensitivity();
    node->input = first.input_space();
    node->output = second.output_space();
    node->leaf_count = first.leaf_count() + second.leaf_count();
    node->first = std::move(first);
    node->second = std::move(second);
    return ModuleTree(std::move(node));
}

ModuleTree ModuleTree::tuple(ModuleTree first, ModuleTree second) {
    if (!first.node_ || !second.node_) throw DimensionError("tuple: empty subtree");
    if (!(first.input_space() == second.input_space())) {
        throw DimensionError("tuple: input spaces " + describe(first.input_space()) + " and " +
                             describe(second.input_space()) + " do not match");
    }
    auto node = std::make_shared<Node>();
    node->kind = Kind::Tuple;
    node->mass = first.mass() + second.mass();
    node->sensitivity = first.sensitivity() + second.sensitivity();
    node->input = first.input_space();
    // The product space is represented by the pair of component spaces; the
    // output norm takes the max across components.
    node->output = first.output_space();
    node->leaf_count = first.leaf_count() + second.leaf_count();
    node->first = std::move(first);
    node->second = std::move(second);
    return ModuleTree(std::move(node));
}

ModuleTree::Kind ModuleTree::kind() const {
    if (!node_) throw DimensionError("empty ModuleTree");
    return node_->kind;
}
const AtomSpec& ModuleTree::atom_spec() const {
    if (kind() != Kind::Atom) throw DimensionError("not an atom node");
    return node_->spec;
}
const ModuleTree& ModuleTree::first() const {
    if (kind() == Kind::Atom) throw DimensionError("atom node has no children");
    return node_->first;
}
const ModuleTree& ModuleTree::second() const {
    if (kind() == Kind::Atom) throw DimensionError("atom node has no children");
    return node_->second;
}
double ModuleTree::mass() const { return node_ ? node_->mass : 0.0; }
double ModuleTree::sensitivity() const { return node_ ? node_->sensitivity : 1.0; }
const Space& ModuleTree::input_space() const {
    if (!node_) throw DimensionError("empty ModuleTree");
    return node_->input;
}
const Space& ModuleTree::output_space() const {
    if (!node_) throw DimensionError("empty ModuleTree");
    return node_->output;
}
std::size_t ModuleTree::leaf_count() const { return node_ ? node_->leaf_count : 0; }

bool ModuleTree::operator==(const ModuleTree& other) const {
    if (!node_ || !other.node_) return node_ == other.node_;
    if (node_->kind != other.node_->kind) return false;
    if (node_->kind == Kind::Atom) return node_->spec == other.node_->spec;
    return node_->first == other.node_->first && node_->second == other.node_->second;
}

// ------------------------------------------------------- weight plumbing

namespace {

LeafTensor zero_leaf_like(const AtomSpec& spec) {
    switch (spec.kind) {
        case AtomKind::Linear:
        case AtomKind::Embed:
            return Matrix(spec.d_out, spec.d_in);
        case AtomKind::Conv2D:
            return Tensor4(spec.d_out, spec.d_in, spec.k, spec.k);
        default:
            return std::monostate{};
    }
}

void collect_specs(const ModuleTree& m, std::vector<const AtomSpec*>& out) {
    if (m.kind() == ModuleTree::Kind::Atom) {
        out.push_back(&m.atom_spec());
        return;
    }
    collect_specs(m.first(), out);
    collect_specs(m.second(), out);
}

void check_leaf_shapes(const ModuleTree& m, const std::vector<LeafTensor>& leaves,
                       const char* what) {
    std::vector<const AtomSpec*> specs;
    collect_specs(m, specs);
    if (specs.size() != leaves.size()) {
        throw DimensionError(std::string(what) + ": " + std::to_string(leaves.size()) +
                             " leaves for " + std::to_string(specs.size()) + " atoms");
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const AtomSpec& spec = *specs[i];
        const LeafTensor& leaf = leaves[i];
        switch (spec.kind) {
            case AtomKind::Linear:
            case AtomKind::Embed: {
                const auto* mat = std::get_if<Matrix>(&leaf);
                if (!mat || mat->rows() != spec.d_out || mat->cols() != spec.d_in)
                    throw DimensionError(std::string(what) + ": leaf " + std::to_string(i) +
                                         " shape mismatch");
                break;
            }
            case AtomKind::Conv2D: {
                const auto* t = std::get_if<Tensor4>(&leaf);
                if (!t || t->d_out() != spec.d_out || t->d_in() != spec.d_in || t->k() != spec.k)
                    throw DimensionError(std::string(what) + ": leaf " + std::to_string(i) +
                                         " shape mismatch");
                break;
            }
            default:
                if (!std::holds_alternative<std::monostate>(leaf))
                    throw DimensionError(std::string(what) + ": bond leaf " + std::to_string(i) +
                                         " must be empty");
        }
    }
}

std::vector<LeafTensor> zero_leaves(const ModuleTree& m) {
    std::vector<const AtomSpec*> specs;
    collect_specs(m, specs);
    std::vector<LeafTensor> leaves;
    leaves.reserve(specs.size());
    for (const AtomSpec* spec : specs) leaves.push_back(zero_leaf_like(*spec));
    return leaves;
}

bool leaf_is_zero(const LeafTensor& leaf) {
    if (const auto* m = std::get_if<Matrix>(&leaf)) return is_zero(*m);
    if (const auto* t = std::get_if<Tensor4>(&leaf)) {
        for (double x : t->entries())
            if (x != 0.0) return false;
    }
    return true;
}

double atom_norm(const AtomSpec& spec, const LeafTensor& leaf) {
    switch (spec.kind) {
        case AtomKind::Linear:
            return linear_norm(std::get<Matrix>(leaf));
        case AtomKind::Embed:
            return embed_norm(std::get<Matrix>(leaf));
        case AtomKind::Conv2D:
            return conv2d_norm(std::get<Tensor4>(leaf));
        default:
            return 0.0;  // bonds: the norm is identically zero
    }
}

LeafTensor atom_dualize(const AtomSpec& spec, const LeafTensor& leaf,
                        const IterationSchedule& schedule) {
    switch (spec.kind) {
        case AtomKind::Linear:
            return linear_dualize(std::get<Matrix>(leaf), schedule);
        case AtomKind::Embed:
            return embed_dualize(std::get<Matrix>(leaf));
        case AtomKind::Conv2D:
            return conv2d_dualize(std::get<Tensor4>(leaf), schedule);
        default:
            return std::monostate{};
    }
}

LeafTensor scale_leaf(const LeafTensor& leaf, double c) {
    if (const auto* m = std::get_if<Matrix>(&leaf)) return scaled(*m, c);
    if (const auto* t = std::get_if<Tensor4>(&leaf)) {
        Tensor4 out = *t;
        for (double& x : out.entries()) x *= c;
        return out;
    }
    return std::monostate{};
}

}  // namespace

WeightTree WeightTree::zeros_like(const ModuleTree& m) { return WeightTree(zero_leaves(m)); }
GradTree GradTree::zeros_like(const ModuleTree& m) { return GradTree(zero_leaves(m)); }

void check_congruent(const ModuleTree& m, const WeightTree& w) {
    check_leaf_shapes(m, w.leaves(), "WeightTree");
}
void check_congruent(const ModuleTree& m, const GradTree& g) {
    check_leaf_shapes(m, g.leaves(), "GradTree");
}

// ------------------------------------------------------------ module_norm

namespace {

double norm_rec(const ModuleTree& m, const std::vector<LeafTensor>& leaves, std::size_t& cursor) {
    if (m.kind() == ModuleTree::Kind::Atom) {
        return atom_norm(m.atom_spec(), leaves[cursor++]);
    }
    const ModuleTree& m1 = m.first();
    const ModuleTree& m2 = m.second();
    const double n1 = norm_rec(m1, leaves, cursor);
    const double n2 = norm_rec(m2, leaves, cursor);
    const double total = m.mass();
    // A zero-mass child's term is set to zero.
    double t1 = 0.0, t2 = 0.0;
    if (m1.mass() > 0.0) {
        t1 = (total / m1.mass()) * n1;
        if (m.kind() == ModuleTree::Kind::Composite) t1 *= m2.sensitivity();
    }
    if (m2.mass() > 0.0) t2 = (total / m2.mass()) * n2;
    return std::max(t1, t2);
}

}  // namespace

double module_norm(const ModuleTree& m, const WeightTree& w) {
    check_congruent(m, w);
    std::size_t cursor = 0;
    return norm_rec(m, w.leaves(), cursor);
}

// --------------------------------------------------------- module_dualize

namespace {

bool subtree_grad_is_zero(const std::vector<LeafTensor>& leaves, std::size_t begin,
                          std::size_t count) {
    for (std::size_t i = begin; i < begin + count; ++i)
        if (!leaf_is_zero(leaves[i])) return false;
    return true;
}

void dualize_rec(const ModuleTree& m, const std::vector<LeafTensor>& grads, std::size_t& cursor,
                 double scale, const IterationSchedule& schedule,
                 std::vector<LeafTensor>& out) {
    if (m.kind() == ModuleTree::Kind::Atom) {
        const AtomSpec& spec = m.atom_spec();
        const LeafTensor& g = grads[cursor++];
        if (!spec.has_weights() || leaf_is_zero(g)) {
            out.push_back(zero_leaf_like(spec));
            return;
        }
        out.push_back(scale_leaf(atom_dualize(spec, g, schedule), scale));
        return;
    }

    const ModuleTree& m1 = m.first();
    const ModuleTree& m2 = m.second();
    const double total = m.mass();
    const bool is_composite = m.kind() == ModuleTree::Kind::Composite;

    auto child = [&](const ModuleTree& c, double factor_num) {
        if (c.mass() == 0.0) {
            // No mass means the norm cannot see this subtree; a nonzero
            // gradient here has an infinite dual norm.
            if (!subtree_grad_is_zero(grads, cursor, c.leaf_count()))
                throw ZeroMassGradientError(
                    "module_dualize: zero-mass subtree carries a nonzero gradient");
            // Emit zero leaves of the right shapes.
            std::vector<const AtomSpec*> specs;
            collect_specs(c, specs);
            for (const AtomSpec* spec : specs) out.push_back(zero_leaf_like(*spec));
            cursor += c.leaf_count();
            return;
        }
        dualize_rec(c, grads, cursor, scale * factor_num * (c.mass() / total), schedule, out);
    };

    const double first_extra = is_composite ? 1.0 / m2.sensitivity() : 1.0;
    child(m1, first_extra);
    child(m2, 1.0);
}

}  // namespace

WeightTree module_dualize(const ModuleTree& m, const GradTree& g,
                          const IterationSchedule& schedule) {
    check_congruent(m, g);
    std::vector<LeafTensor> out;
    out.reserve(g.leaves().size());
    std::size_t cursor = 0;
    dualize_rec(m, g.leaves(), cursor, 1.0, schedule, out);
    return WeightTree(std::move(out));
}

// ----------------------------------------------------- leaf arithmetic

double inner_product(const GradTree& g, const WeightTree& w) {
    if (g.leaves().size() != w.leaves().size())
        throw DimensionError("inner_product: leaf count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < g.leaves().size(); ++i) {
        const LeafTensor& a = g.leaves()[i];
        const LeafTensor& b = w.leaves()[i];
        if (const auto* ma = std::get_if<Matrix>(&a)) {
            const auto* mb = std::get_if<Matrix>(&b);
            if (!mb || ma->rows() != mb->rows() || ma->cols() != mb->cols())
                throw DimensionError("inner_product: leaf shape mismatch");
            acc += dot(ma->entries(), mb->entries());
        } else if (const auto* ta = std::get_if<Tensor4>(&a)) {
            const auto* tb = std::get_if<Tensor4>(&b);
            if (!tb || ta->size() != tb->size())
                throw DimensionError("inner_product: leaf shape mismatch");
            acc += dot(ta->entries(), tb->entries());
        }
    }
    return acc;
}

namespace {

LeafTensor axpy_leaf(const LeafTensor& a, double alpha, const LeafTensor& b) {
    if (const auto* ma = std::get_if<Matrix>(&a)) {
        const auto& mb = std::get<Matrix>(b);
        Matrix out = *ma;
        auto os = out.entries();
        auto bs = mb.entries();
        for (std::size_t i = 0; i < os.size(); ++i) os[i] += alpha * bs[i];
        return out;
    }
    if (const auto* ta = std::get_if<Tensor4>(&a)) {
        const auto& tb = std::get<Tensor4>(b);
        Tensor4 out = *ta;
        auto os = out.entries();
        auto bs = tb.entries();
        for (std::size_t i = 0; i < os.size(); ++i) os[i] += alpha * bs[i];
        return out;
    }
    return std::monostate{};
}

}  // namespace

WeightTree axpy(const WeightTree& w, double alpha, const WeightTree& d) {
    if (w.leaves().size() != d.leaves().size()) throw DimensionError("axpy: leaf count mismatch");
    std::vector<LeafTensor> out;
    out.reserve(w.leaves().size());
    for (std::size_t i = 0; i < w.leaves().size(); ++i)
        out.push_back(axpy_leaf(w.leaves()[i], alpha, d.leaves()[i]));
    return WeightTree(std::move(out));
}

WeightTree scale_weights(const WeightTree& w, double c) {
    std::vector<LeafTensor> out;
    out.reserve(w.leaves().size());
    for (const LeafTensor& leaf : w.leaves()) out.push_back(scale_leaf(leaf, c));
    return WeightTree(std::move(out));
}

GradTree scale_grads(const GradTree& g, double c) {
    std::vector<LeafTensor> out;
    out.reserve(g.leaves().size());
    for (const LeafTensor& leaf : g.leaves()) out.push_back(scale_leaf(leaf, c));
    return GradTree(std::move(out));
}

void accumulate(GradTree& into, const GradTree& g) {
    if (into.leaves().size() != g.leaves().size())
        throw DimensionError("accumulate: leaf count mismatch");
    for (std::size_t i = 0; i < g.leaves().size(); ++i)
        into.leaves()[i] = axpy_leaf(into.leaves()[i], 1.0, g.leaves()[i]);
}

std::vector<double> leaf_norms(const ModuleTree& m, const WeightTree& w) {
    check_congruent(m, w);
    std::vector<const AtomSpec*> specs;
    collect_specs(m, specs);
    std::vector<double> out;
    out.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i)
        out.push_back(atom_norm(*specs[i], w.leaves()[i]));
    return out;
}

// ------------------------------------------------- evaluation machinery

namespace {

void check_value_space(const Value& v, const Space& s, const char* what) {
    if (const auto* vs = std::get_if<VectorSpace>(&s)) {
        if (!v.is_vec() || v.as_vec().size() != vs->dim)
            throw DimensionError(std::string(what) + ": value does not match " + describe(s));
        return;
    }
    const auto& img = std::get<ImageSpace>(s);
    if (!v.is_image() || v.as_image().width() != img.width ||
        v.as_image().height() != img.height || v.as_image().channels() != img.channels)
        throw DimensionError(std::string(what) + ": value does not match " + describe(s));
}

Value atom_forward(const AtomSpec& spec, const LeafTensor& w, const Value& x) {
    switch (spec.kind) {
        case AtomKind::Linear:
        case AtomKind::Embed:
            return Value::vec(linear_forward(std::get<Matrix>(w), x.as_vec()));
        case AtomKind::Conv2D:
            return Value::image(conv2d_forward(std::get<Tensor4>(w), x.as_image()));
        case AtomKind::BondReLU:
            return x.is_vec() ? Value::vec(relu(x.as_vec())) : Value::image(relu(x.as_image()));
        case AtomKind::BondFlatten:
            return Value::vec(flatten(x.as_image()));
    }
    throw DimensionError("unknown atom kind");
}

Value forward_rec(const ModuleTree& m, const std::vector<LeafTensor>& w, std::size_t& cursor,
                  const Value& x) {
    if (m.kind() == ModuleTree::Kind::Atom) return atom_forward(m.atom_spec(), w[cursor++], x);
    if (m.kind() == ModuleTree::Kind::Composite) {
        const Value mid = forward_rec(m.first(), w, cursor, x);
        return forward_rec(m.second(), w, cursor, mid);
    }
    const Value a = forward_rec(m.first(), w, cursor, x);
    const Value b = forward_rec(m.second(), w, cursor, x);
    return Value::tuple(std::move(a), std::move(b));
}

std::pair<Value, Value> jvp_rec(const ModuleTree& m, const std::vector<LeafTensor>& w,
                                const std::vector<LeafTensor>& dw, std::size_t& cursor,
                                const Value& x, const Value& dx) {
    if (m.kind() == ModuleTree::Kind::Atom) {
        const AtomSpec& spec = m.atom_spec();
        const std::size_t i = cursor++;
        switch (spec.kind) {
            case AtomKind::Linear:
            case AtomKind::Embed: {
                const auto& wm = std::get<Matrix>(w[i]);
                const auto& dm = std::get<Matrix>(dw[i]);
                std::vector<double> y = linear_forward(wm, x.as_vec());
                std::vector<double> dy = linear_forward(dm, x.as_vec());
                const std::vector<double> w_dx = linear_forward(wm, dx.as_vec());
                for (std::size_t t = 0; t < dy.size(); ++t) dy[t] += w_dx[t];
                return {Value::vec(std::move(y)), Value::vec(std::move(dy))};
            }
            case AtomKind::Conv2D: {
                const auto& wt = std::get<Tensor4>(w[i]);
                const auto& dt = std::get<Tensor4>(dw[i]);
                Tensor3 y = conv2d_forward(wt, x.as_image());
                Tensor3 dy = conv2d_forward(dt, x.as_image());
                const Tensor3 w_dx = conv2d_forward(wt, dx.as_image());
                auto ds = dy.entries();
                auto ws = w_dx.entries();
                for (std::size_t t = 0; t < ds.size(); ++t) ds[t] += ws[t];
                return {Value::image(std::move(y)), Value::image(std::move(dy))};
            }
            case AtomKind::BondReLU: {
                if (x.is_vec()) {
                    return {Value::vec(relu(x.as_vec())),
                            Value::vec(relu_backward(x.as_vec(), dx.as_vec()))};
                }
                return {Value::image(relu(x.as_image())),
                        Value::image(relu_backward(x.as_image(), dx.as_image()))};
            }
            case AtomKind::BondFlatten:
                return {Value::vec(flatten(x.as_image())), Value::vec(flatten(dx.as_image()))};
        }
        throw DimensionError("unknown atom kind");
    }
    if (m.kind() == ModuleTree::Kind::Composite) {
        auto [y1, dy1] = jvp_rec(m.first(), w, dw, cursor, x, dx);
        return jvp_rec(m.second(), w, dw, cursor, y1, dy1);
    }
    auto [ya, dya] = jvp_rec(m.first(), w, dw, cursor, x, dx);
    auto [yb, dyb] = jvp_rec(m.second(), w, dw, cursor, x, dx);
    return {Value::tuple(std::move(ya), std::move(yb)), Value::tuple(std::move(dya), std::move(dyb))};
}

Value backward_rec(const ModuleTree& m, const std::vector<LeafTensor>& w, std::size_t cursor,
                   const Value& x, const Value& upstream, std::vector<LeafTensor>& grads) {
    if (m.kind() == ModuleTree::Kind::Atom) {
        const AtomSpec& spec = m.atom_spec();
        switch (spec.kind) {
            case AtomKind::Linear:
            case AtomKind::Embed: {
                LinearGrads lg =
                    linear_backward(std::get<Matrix>(w[cursor]), x.as_vec(), upstream.as_vec());
                grads[cursor] = axpy_leaf(grads[cursor], 1.0, LeafTensor(std::move(lg.w)));
                return Value::vec(std::move(lg.x));
            }
            case AtomKind::Conv2D: {
                Conv2DGrads cg = conv2d_backward(std::get<Tensor4>(w[cursor]), x.as_image(),
                                                 upstream.as_image());
                grads[cursor] = axpy_leaf(grads[cursor], 1.0, LeafTensor(std::move(cg.w)));
                return Value::image(std::move(cg.x));
            }
            case AtomKind::BondReLU:
                return x.is_vec()
                           ? Value::vec(relu_backward(x.as_vec(), upstream.as_vec()))
                           : Value::image(relu_backward(x.as_image(), upstream.as_image()));
            case AtomKind::BondFlatten: {
                const auto& img = std::get<ImageSpace>(spec.bond_space);
                return Value::image(
                    flatten_backward(img.width, img.height, img.channels, upstream.as_vec()));
            }
        }
        throw DimensionError("unknown atom kind");
    }
    if (m.kind() == ModuleTree::Kind::Composite) {
        std::size_t c = cursor;
        const Value mid = forward_rec(m.first(), w, c, x);
        const Value mid_grad = backward_rec(m.second(), w, cursor + m.first().leaf_count(), mid,
                                            upstream, grads);
        return backward_rec(m.first(), w, cursor, x, mid_grad, grads);
    }
    const Value ga = backward_rec(m.first(), w, cursor, x, upstream.first(), grads);
    const Value gb =
        backward_rec(m.second(), w, cursor + m.first().leaf_count(), x, upstream.second(), grads);
    return add_values(ga, gb);
}

}  // namespace

Value forward_eval(const ModuleTree& m, const WeightTree& w, const Value& x) {
    check_congruent(m, w);
    check_value_space(x, m.input_space(), "forward_eval");
    std::size_t cursor = 0;
    return forward_rec(m, w.leaves(), cursor, x);
}

std::pair<Value, Value> forward_jvp(const ModuleTree& m, const WeightTree& w, const Value& x,
                                    const WeightTree& dw, const Value& dx) {
    check_congruent(m, w);
    check_congruent(m, dw);
    check_value_space(x, m.input_space(), "forward_jvp");
    check_value_space(dx, m.input_space(), "forward_jvp");
    std::size_t cursor = 0;
    return jvp_rec(m, w.leaves(), dw.leaves(), cursor, x, dx);
}

BackwardResult backward(const ModuleTree& m, const WeightTree& w, const Value& x,
                        const Value& upstream) {
    check_congruent(m, w);
    check_value_space(x, m.input_space(), "backward");
    GradTree grads = GradTree::zeros_like(m);
    Value input_grad = backward_rec(m, w.leaves(), 0, x, upstream, grads.leaves());
    return BackwardResult{std::move(grads), std::move(input_grad)};
}

// ---------------------------------------------------------- space norms

namespace {

double value_norm_for_space(const Value& v) {
    // RMS for vectors, spatial max channel-RMS for images.
    if (v.is_vec()) return rms_norm(v.as_vec());
    return spatial_max_rms(v.as_image());
}

}  // namespace

double input_norm(const ModuleTree& m, const Value& x) {
    if (m.kind() == ModuleTree::Kind::Atom) {
        switch (m.atom_spec().kind) {
            case AtomKind::Embed:
                return embed_input_norm(x.as_vec());
            case AtomKind::Linear:
                return linear_input_norm(x.as_vec());
            case AtomKind::Conv2D:
                return conv2d_input_norm(x.as_image());
            default:
                return value_norm_for_space(x);
        }
    }
    return input_norm(m.first(), x);
}

double output_norm(const ModuleTree& m, const Value& y) {
    if (m.kind() == ModuleTree::Kind::Tuple) {
        if (!y.is_tuple()) throw DimensionError("output_norm: expected tuple value");
        return std::max(output_norm(m.first(), y.first()), output_norm(m.second(), y.second()));
    }
    if (m.kind() == ModuleTree::Kind::Composite) return output_norm(m.second(), y);
    return value_norm_for_space(y);
}

namespace {

Value relu_margin_rec(const ModuleTree& m, const std::vector<LeafTensor>& w, std::size_t& cursor,
                      const Value& x, double& margin) {
    if (m.kind() == ModuleTree::Kind::Atom) {
        if (m.atom_spec().kind == AtomKind::BondReLU) {
            if (x.is_vec()) {
                for (double e : x.as_vec()) margin = std::min(margin, std::abs(e));
            } else {
                for (double e : x.as_image().entries()) margin = std::min(margin, std::abs(e));
            }
        }
        return atom_forward(m.atom_spec(), w[cursor++], x);
    }
    if (m.kind() == ModuleTree::Kind::Composite) {
        const Value mid = relu_margin_rec(m.first(), w, cursor, x, margin);
        return relu_margin_rec(m.second(), w, cursor, mid, margin);
    }
    Value a = relu_margin_rec(m.first(), w, cursor, x, margin);
    Value b = relu_margin_rec(m.second(), w, cursor, x, margin);
    return Value::tuple(std::move(a), std::move(b));
}

}  // namespace

double min_relu_margin(const ModuleTree& m, const WeightTree& w, const Value& x) {
    check_congruent(m, w);
    double margin = std::numeric_limits<double>::infinity();
    std::size_t cursor = 0;
    relu_margin_rec(m, w.leaves(), cursor, x, margin);
    return margin;
}

// ------------------------------------------------------- random sampling

namespace {

LeafTensor random_leaf(const AtomSpec& spec, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    switch (spec.kind) {
        case AtomKind::Linear:
        case AtomKind::Embed: {
            Matrix m(spec.d_out, spec.d_in);
            for (double& x : m.entries()) x = gauss(rng);
            return m;
        }
        case AtomKind::Conv2D: {
            Tensor4 t(spec.d_out, spec.d_in, spec.k, spec.k);
            for (double& x : t.entries()) x = gauss(rng);
            return t;
        }
        default:
            return std::monostate{};
    }
}

}  // namespace

WeightTree random_weights(const ModuleTree& m, std::mt19937_64& rng) {
    std::vector<const AtomSpec*> specs;
    collect_specs(m, specs);
    std::vector<LeafTensor> leaves;
    leaves.reserve(specs.size());
    for (const AtomSpec* spec : specs) leaves.push_back(random_leaf(*spec, rng));
    return WeightTree(std::move(leaves));
}

GradTree random_gradients(const ModuleTree& m, std::mt19937_64& rng) {
    std::vector<const AtomSpec*> specs;
    collect_specs(m, specs);
    std::vector<LeafTensor> leaves;
    leaves.reserve(specs.size());
    for (const AtomSpec* spec : specs) leaves.push_back(random_leaf(*spec, rng));
    return GradTree(std::move(leaves));
}

Value random_value(const Space& s, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    if (const auto* v = std::get_if<VectorSpace>(&s)) {
        std::vector<double> x(v->dim);
        for (double& e : x) e = gauss(rng);
        return Value::vec(std::move(x));
    }
    const auto& img = std::get<ImageSpace>(s);
    Tensor3 t(img.width, img.height, img.channels);
    for (double& e : t.entries()) e = gauss(rng);
    return Value::image(std::move(t));
}

// ------------------------------------------------------------ the probe

ProbeReport well_normed_probe(const ModuleTree& m, int trials, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.1, 1.0);
    ProbeReport report;
    report.trials = trials;
    const double allowed = 1.0 + 1e-3;

    for (int trial = 0; trial < trials; ++trial) {
        WeightTree w = random_weights(m, rng);
        const double wn = module_norm(m, w);
        if (wn > 0.0) w = scale_weights(w, unit(rng) / wn);

        Value x = random_value(m.input_space(), rng);
        const double xn = input_norm(m, x);
        if (xn > 0.0) x = scale_value(x, unit(rng) / xn);

        // Weight direction.
        WeightTree dw = random_weights(m, rng);
        const double dwn = module_norm(m, dw);
        if (dwn > 0.0) {
            auto [y, dy] = forward_jvp(m, w, x, dw, zero_value(m.input_space()));
            const double ratio = output_norm(m, dy) / dwn;
            report.max_weight_ratio = std::max(report.max_weight_ratio, ratio);
            if (ratio > allowed) ++report.violations;
        }

        // Input direction.
        Value dx = random_value(m.input_space(), rng);
        const double dxn = input_norm(m, dx);
        if (dxn > 0.0) {
            auto [y, dy] = forward_jvp(m, w, x, WeightTree::zeros_like(m), dx);
            const double ratio = output_norm(m, dy) / (m.sensitivity() * dxn);
            report.max_input_ratio = std::max(report.max_input_ratio, ratio);
            if (ratio > allowed) ++report.violations;
        }
    }
    return report;
}

}  // namespace dualkit
