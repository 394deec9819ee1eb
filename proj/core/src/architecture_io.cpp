#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dualkit/errors.hpp"
#include "dualkit/module_tree.hpp"

namespace dualkit {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

Space space_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "vector") return VectorSpace{j.at("dim").get<std::size_t>()};
    if (type == "image") {
        return ImageSpace{j.at("width").get<std::size_t>(), j.at("height").get<std::size_t>(),
                          j.at("channels").get<std::size_t>()};
    }
    throw ParseError("unknown space type '" + type + "'");
}

ordered_json space_to_json(const Space& s) {
    ordered_json j;
    if (const auto* v = std::get_if<VectorSpace>(&s)) {
        j["type"] = "vector";
        j["dim"] = v->dim;
        return j;
    }
    const auto& img = std::get<ImageSpace>(s);
    j["type"] = "image";
    j["width"] = img.width;
    j["height"] = img.height;
    j["channels"] = img.channels;
    return j;
}

ModuleTree node_from_json(const json& j) {
    if (!j.is_object()) throw ParseError("architecture node must be an object");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "composite")
        return ModuleTree::composite(node_from_json(j.at("first")), node_from_json(j.at("second")));
    if (kind == "tuple")
        return ModuleTree::tuple(node_from_json(j.at("first")), node_from_json(j.at("second")));
    if (kind == "linear")
        return ModuleTree::linear(j.at("d_out").get<std::size_t>(), j.at("d_in").get<std::size_t>(),
                                  j.at("mass").get<double>());
    if (kind == "embed")
        return ModuleTree::embed(j.at("d_out").get<std::size_t>(), j.at("d_in").get<std::size_t>(),
                                 j.at("mass").get<double>());
    if (kind == "conv2d")
        return ModuleTree::conv2d(j.at("d_out").get<std::size_t>(), j.at("d_in").get<std::size_t>(),
                                  j.at("k").get<std::size_t>(), j.at("in_width").get<std::size_t>(),
                                  j.at("in_height").get<std::size_t>(), j.at("mass").get<double>());
    if (kind == "relu") return ModuleTree::relu(space_from_json(j.at("space")));
    if (kind == "flatten")
        return ModuleTree::flatten(j.at("width").get<std::size_t>(),
                                   j.at("height").get<std::size_t>(),
                                   j.at("channels").get<std::size_t>());
    throw ParseError("unknown node kind '" + kind + "'");
}

ordered_json node_to_json(const ModuleTree& m) {
    ordered_json j;
    switch (m.kind()) {
        case ModuleTree::Kind::Composite:
        case ModuleTree::Kind::Tuple:
            j["kind"] = m.kind() == ModuleTree::Kind::Composite ? "composite" : "tuple";
            j["first"] = node_to_json(m.first());
            j["second"] = node_to_json(m.second());
            return j;
        case ModuleTree::Kind::Atom:
            break;
    }
    const AtomSpec& spec = m.atom_spec();
    switch (spec.kind) {
        case AtomKind::Linear:
        case AtomKind::Embed:
            j["kind"] = spec.kind == AtomKind::Linear ? "linear" : "embed";
            j["d_out"] = spec.d_out;
            j["d_in"] = spec.d_in;
            j["mass"] = spec.mass;
            return j;
        case AtomKind::Conv2D:
            j["kind"] = "conv2d";
            j["d_out"] = spec.d_out;
            j["d_in"] = spec.d_in;
            j["k"] = spec.k;
            j["in_width"] = spec.in_width;
            j["in_height"] = spec.in_height;
            j["mass"] = spec.mass;
            return j;
        case AtomKind::BondReLU:
            j["kind"] = "relu";
            j["space"] = space_to_json(spec.bond_space);
            return j;
        case AtomKind::BondFlatten: {
            const auto& img = std::get<ImageSpace>(spec.bond_space);
            j["kind"] = "flatten";
            j["width"] = img.width;
            j["height"] = img.height;
            j["channels"] = img.channels;
            return j;
        }
    }
    throw ParseError("unknown atom kind");
}

}  // namespace

ModuleTree parse_architecture(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("architecture: ") + e.what());
    }
    try {
        return node_from_json(j);
    } catch (const json::exception& e) {
        throw ParseError(std::string("architecture: ") + e.what());
    }
}

std::string serialize_architecture(const ModuleTree& m) { return node_to_json(m).dump(2) + "\n"; }

ModuleTree load_architecture(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open architecture file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_architecture(buf.str());
}

void save_architecture(const std::string& path, const ModuleTree& m) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << serialize_architecture(m);
}

}  // namespace dualkit
