#include <algorithm>
#include <functional>
#include <set>

#include "trd/dbn.hpp"

namespace trd {

using nlohmann::json;

std::string to_string(NodeKind k) { return k == NodeKind::continuous ? "continuous" : "discrete"; }

NodeKind node_kind_from_string(std::string_view s) {
    if (s == "continuous") return NodeKind::continuous;
    if (s == "discrete") return NodeKind::discrete;
    throw ParseError("unknown node kind '" + std::string(s) + "'");
}

namespace {

Edge edge_from_json(const json& e, bool temporal) {
    if (e.is_array()) {
        if (e.size() != 2) throw ParseError("edge must be [from, to]");
        return {e[0].get<std::string>(), e[1].get<std::string>()};
    }
    Edge edge{e.at("from").get<std::string>(), e.at("to").get<std::string>()};
    const int lag = e.value("lag", temporal ? 1 : 0);
    if (temporal && lag != 1)
        throw StructureError("temporal edge " + edge.from + " -> " + edge.to + " spans " + std::to_string(lag) +
                             " slices; only the same or previous slice may link");
    if (!temporal && lag != 0) throw StructureError("within-slice edge " + edge.from + " -> " + edge.to + " has a lag");
    return edge;
}

}  // namespace

NetworkTemplate NetworkTemplate::from_json(const json& j) {
    NetworkTemplate t;
    try {
        t.version = j.value("version", "");
        for (const auto& n : j.at("nodes")) {
            NodeSpec spec;
            spec.name = n.at("name").get<std::string>();
            spec.kind = node_kind_from_string(n.value("kind", "continuous"));
            const std::string tr = n.value("transform", "catalog");
            if (tr != "catalog") spec.transform = Transform::parse(tr);
            t.nodes.push_back(std::move(spec));
        }
        if (j.contains("within_edges"))
            for (const auto& e : j.at("within_edges")) t.within_edges.push_back(edge_from_json(e, false));
        if (j.contains("temporal_edges"))
            for (const auto& e : j.at("temporal_edges")) t.temporal_edges.push_back(edge_from_json(e, true));
        t.class_node = j.at("class_node").get<std::string>();
        if (j.contains("class_children")) t.class_children = j.at("class_children").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("network template: ") + e.what());
    }
    t.validate();
    return t;
}

NetworkTemplate NetworkTemplate::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError("network template '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

json NetworkTemplate::to_json() const {
    json j;
    j["version"] = version;
    j["class_node"] = class_node;
    json nodes_j = json::array();
    for (const auto& n : nodes) {
        json nj{{"name", n.name}, {"kind", trd::to_string(n.kind)}};
        if (n.transform) nj["transform"] = n.transform->to_string();
        nodes_j.push_back(nj);
    }
    j["nodes"] = nodes_j;
    j["within_edges"] = json::array();
    for (const auto& e : within_edges) j["within_edges"].push_back({e.from, e.to});
    j["temporal_edges"] = json::array();
    for (const auto& e : temporal_edges) j["temporal_edges"].push_back({e.from, e.to});
    j["class_children"] = class_children;
    return j;
}

std::optional<std::size_t> NetworkTemplate::find(std::string_view name) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].name == name) return i;
    return std::nullopt;
}

std::size_t NetworkTemplate::index(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw StructureError("unknown network node '" + std::string(name) + "'");
}

std::vector<std::string> NetworkTemplate::slice_node_names() const {
    std::vector<std::string> out;
    for (auto n : slice_nodes_) out.push_back(nodes[n].name);
    return out;
}

void NetworkTemplate::validate() {
    std::set<std::string> seen;
    for (const auto& n : nodes) {
        if (n.name.empty()) throw StructureError("node with empty name");
        if (!seen.insert(n.name).second) throw StructureError("duplicate node '" + n.name + "'");
    }
    class_index_ = index(class_node);
    if (!is_discrete(class_index_)) throw StructureError("class node '" + class_node + "' must be discrete");

    slice_nodes_.clear();
    column_.assign(nodes.size(), 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (i == class_index_) continue;
        column_[i] = slice_nodes_.size();
        slice_nodes_.push_back(i);
    }
    if (slice_nodes_.empty()) throw StructureError("template has no slice nodes");

    auto check_edges = [&](const std::vector<Edge>& edges, const char* what) {
        std::set<std::pair<std::size_t, std::size_t>> dup;
        for (const auto& e : edges) {
            const auto from = index(e.from), to = index(e.to);
            if (to == class_index_ || from == class_index_)
                throw StructureError(std::string(what) + " edge " + e.from + " -> " + e.to +
                                     " touches the class node; declare class links with class_children");
            if (!dup.insert({from, to}).second)
                throw StructureError(std::string("duplicate ") + what + " edge " + e.from + " -> " + e.to);
            if (is_discrete(to) && !is_discrete(from))
                throw StructureError("discrete node '" + e.to + "' has continuous parent '" + e.from + "'");
        }
    };
    check_edges(within_edges, "within-slice");
    check_edges(temporal_edges, "temporal");
    std::set<std::string> children;
    for (const auto& c : class_children) {
        if (index(c) == class_index_) throw StructureError("class node cannot be its own child");
        if (!children.insert(c).second) throw StructureError("duplicate class child '" + c + "'");
    }

    // Acyclicity on a two-slice unroll; temporal edges only point forward, so any cycle
    // found lies inside one slice.
    const std::size_t m = slice_nodes_.size();
    std::vector<std::vector<std::size_t>> adj(2 * m);
    for (int t = 0; t < 2; ++t)
        for (const auto& e : within_edges)
            adj[t * m + column_[index(e.from)]].push_back(t * m + column_[index(e.to)]);
    for (const auto& e : temporal_edges) adj[column_[index(e.from)]].push_back(m + column_[index(e.to)]);
    std::vector<int> state(2 * m, 0);
    std::vector<std::size_t> stack;
    std::function<void(std::size_t)> dfs = [&](std::size_t u) {
        state[u] = 1;
        stack.push_back(u);
        for (auto v : adj[u]) {
            if (state[v] == 1) {
                std::string msg = "cycle in unrolled network:";
                auto it = std::find(stack.begin(), stack.end(), v);
                for (; it != stack.end(); ++it)
                    msg += " " + nodes[slice_nodes_[*it % m]].name + "[" + std::to_string(*it / m) + "] ->";
                msg += " " + nodes[slice_nodes_[v % m]].name + "[" + std::to_string(v / m) + "]";
                throw StructureError(msg);
            }
            if (state[v] == 0) dfs(v);
        }
        stack.pop_back();
        state[u] = 2;
    };
    for (std::size_t u = 0; u < 2 * m; ++u)
        if (state[u] == 0) dfs(u);

    // Within-slice topological order, smallest column first among ready nodes.
    std::vector<int> indeg(m, 0);
    for (const auto& e : within_edges) ++indeg[column_[index(e.to)]];
    std::set<std::size_t> ready;
    for (std::size_t c = 0; c < m; ++c)
        if (indeg[c] == 0) ready.insert(c);
    topo_columns_.clear();
    while (!ready.empty()) {
        const auto c = *ready.begin();
        ready.erase(ready.begin());
        topo_columns_.push_back(c);
        for (auto v : adj[c])
            if (v < m && --indeg[v] == 0) ready.insert(v);
    }

    for (int tie = 0; tie < 2; ++tie) {
        families_[tie].assign(nodes.size(), Family{});
        for (auto n : slice_nodes_) {
            Family& f = families_[tie][n];
            if (children.count(nodes[n].name)) f.discrete.push_back({class_index_, 0});
            auto add = [&](const std::vector<Edge>& edges, int lag) {
                for (const auto& e : edges) {
                    if (index(e.to) != n) continue;
                    const ParentRef p{index(e.from), lag};
                    (is_discrete(p.node) ? f.discrete : f.continuous).push_back(p);
                }
            };
            add(within_edges, 0);
            if (tie == kTransition) add(temporal_edges, 1);
            if (f.discrete.size() > 16)
                throw StructureError("node '" + nodes[n].name + "' has too many discrete parents");
        }
    }
}

UnrolledNetwork unroll(const NetworkTemplate& tmpl, int horizon) {
    if (horizon < 1) throw DomainError("unroll horizon must be at least 1 slice");
    UnrolledNetwork net;
    net.horizon = horizon;
    net.slice_size = tmpl.slice_size();
    net.unrolled_of_column.assign(net.slice_size, 0);
    const auto& topo = tmpl.topo_columns();
    for (std::size_t r = 0; r < topo.size(); ++r) net.unrolled_of_column[topo[r]] = r;

    net.nodes.reserve(1 + horizon * net.slice_size);
    net.nodes.push_back({tmpl.class_index(), -1, 0, {}, {}});
    for (int t = 0; t < horizon; ++t) {
        for (auto c : topo) {
            const auto node = tmpl.slice_nodes()[c];
            const Family& f = tmpl.family(node, t == 0 ? kInitial : kTransition);
            UnrolledNode u{node, t, c, {}, {}};
            auto resolve = [&](const ParentRef& p) -> std::size_t {
                if (p.node == tmpl.class_index()) return 0;
                return net.index(t - p.lag, tmpl.column(p.node));
            };
            for (const auto& p : f.discrete) u.discrete_parents.push_back(resolve(p));
            for (const auto& p : f.continuous) u.continuous_parents.push_back(resolve(p));
            net.nodes.push_back(std::move(u));
        }
    }
    net.within_edge_count = horizon * tmpl.within_edges.size();
    net.temporal_edge_count = (horizon - 1) * tmpl.temporal_edges.size();
    net.class_edge_count = horizon * tmpl.class_children.size();
    return net;
}

}  // namespace trd
