#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "trd/cohort.hpp"

namespace trd {

enum class NodeKind { continuous, discrete };

std::string to_string(NodeKind k);
NodeKind node_kind_from_string(std::string_view s);

struct NodeSpec {
    std::string name;
    NodeKind kind = NodeKind::continuous;
    /// Explicit transform; absent means "use the catalog entry of the same name".
    std::optional<Transform> transform;
};

struct Edge {
    std::string from;
    std::string to;
    bool operator==(const Edge&) const = default;
};

/// A parent of a template node: `lag` 0 is the same slice, 1 the previous one.
struct ParentRef {
    std::size_t node = 0;
    int lag = 0;
    bool operator==(const ParentRef&) const = default;
};

/// Parent sets of one node under one tie (initial slice or transition).
struct Family {
    std::vector<ParentRef> discrete;  // class node first when present
    std::vector<ParentRef> continuous;

    std::size_t n_configs() const { return std::size_t{1} << discrete.size(); }
};

enum Tie : int { kInitial = 0, kTransition = 1 };

/// Slice template of a class-conditional linear-Gaussian DBN.
struct NetworkTemplate {
    std::string version;
    std::vector<NodeSpec> nodes;  // includes the class node
    std::vector<Edge> within_edges;
    std::vector<Edge> temporal_edges;  // slice t -> slice t+1
    std::string class_node;
    std::vector<std::string> class_children;

    static NetworkTemplate load(const std::filesystem::path& path);
    static NetworkTemplate from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    /// Throws StructureError on cycles, bad parents or unknown names; fills derived tables.
    void validate();

    std::optional<std::size_t> find(std::string_view name) const;
    std::size_t index(std::string_view name) const;
    std::size_t class_index() const { return class_index_; }
    /// Non-class nodes in declaration order; these are the evidence columns.
    const std::vector<std::size_t>& slice_nodes() const { return slice_nodes_; }
    std::vector<std::string> slice_node_names() const;
    std::size_t slice_size() const { return slice_nodes_.size(); }
    /// Evidence column of a non-class template node.
    std::size_t column(std::size_t node) const { return column_[node]; }
    /// Within-slice topological order of the evidence columns.
    const std::vector<std::size_t>& topo_columns() const { return topo_columns_; }
    const Family& family(std::size_t node, Tie tie) const { return families_[tie][node]; }
    bool is_discrete(std::size_t node) const { return nodes[node].kind == NodeKind::discrete; }

private:
    std::size_t class_index_ = 0;
    std::vector<std::size_t> slice_nodes_;
    std::vector<std::size_t> column_;
    std::vector<std::size_t> topo_columns_;
    std::array<std::vector<Family>, 2> families_;
};

struct UnrolledNode {
    std::size_t node = 0;  // template node
    int slice = -1;        // -1 for the shared class node
    std::size_t column = 0;
    std::vector<std::size_t> discrete_parents;    // unrolled indices, family order
    std::vector<std::size_t> continuous_parents;  // unrolled indices, family order
};

/// Index 0 is the class node; slice t, topological rank r is `1 + t*M + r`.
struct UnrolledNetwork {
    int horizon = 0;
    std::size_t slice_size = 0;
    std::vector<UnrolledNode> nodes;  // topological order
    std::vector<std::size_t> unrolled_of_column;  // rank lookup: column -> rank
    std::size_t within_edge_count = 0;
    std::size_t temporal_edge_count = 0;
    std::size_t class_edge_count = 0;

    bool is_continuous(std::size_t i, const NetworkTemplate& tmpl) const { return i != 0 && !tmpl.is_discrete(nodes[i].node); }
    std::size_t index(int slice, std::size_t column) const {
        return 1 + static_cast<std::size_t>(slice) * slice_size + unrolled_of_column[column];
    }
};

UnrolledNetwork unroll(const NetworkTemplate& tmpl, int horizon);

/// `p(child | continuous parents) = N(intercept + coefficients . x, variance)` per discrete configuration.
struct LinearGaussianCPD {
    struct Row {
        double intercept = 0;
        Eigen::VectorXd coefficients;
        double variance = 1;
    };
    std::vector<Row> rows;  // discrete configuration, first parent = least significant bit
};

/// Binary conditional probability table; `rows[k] = {P(false), P(true)}`.
struct DiscreteCPD {
    std::vector<std::array<double, 2>> rows;
};

inline constexpr double kVarianceFloor = 1e-8;

struct TrainingInfo {
    int iterations = 0;
    double log_likelihood = 0;
    std::vector<double> log_likelihood_trace;
    std::uint64_t seed = 0;
    bool converged = true;
    std::vector<std::string> warnings;
};

struct TrainedDBN {
    NetworkTemplate tmpl;
    double class_prior = 0.5;  // P(class = 1)
    /// Indexed by template node and tie; the class node's entries are unused.
    std::vector<std::array<LinearGaussianCPD, 2>> gaussian;
    std::vector<std::array<DiscreteCPD, 2>> discrete;
    TrainingInfo info;

    nlohmann::json to_json() const;
    static TrainedDBN from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static TrainedDBN load(const std::filesystem::path& path);
};

/// T x M matrix over evidence columns; NaN marks an unobserved value, discrete values are 0/1.
using Evidence = Eigen::MatrixXd;

Evidence empty_evidence(const NetworkTemplate& tmpl, int horizon);

/// Configuration index of an unrolled node given class and discrete evidence.
std::size_t discrete_config(const UnrolledNetwork& net, const UnrolledNode& node, const Evidence& x, int class_value);

/// Linear-Gaussian system `x = b + B x + e`, `e ~ N(0, diag(D))`, over `nodes` (unrolled, topological).
struct GaussianSystem {
    std::vector<std::size_t> nodes;
    Eigen::VectorXd b;
    Eigen::MatrixXd B;
    Eigen::VectorXd D;
};

/// All continuous unrolled nodes, or only `subset` when given (must be closed under parents).
GaussianSystem gaussian_system(const TrainedDBN& model, const UnrolledNetwork& net, const Evidence& x,
                               int class_value, const std::vector<std::size_t>* subset = nullptr);

/// Chain-rule log density of a fully observed assignment (class included).
double joint_log_density(const TrainedDBN& model, const Evidence& x, int class_value);

/// log p(observed | class); unobserved continuous nodes are integrated out exactly.
double class_conditional_loglik(const TrainedDBN& model, const Evidence& x, int class_value);

/// {P(class=0 | x), P(class=1 | x)}, normalized in log space.
std::array<double, 2> class_posterior(const TrainedDBN& model, const Evidence& x);
double predict_mortality(const TrainedDBN& model, const Evidence& x);

/// Posterior given the first `x.rows()` slices, unrolled `lookahead` slices further with
/// the future left unobserved.
double forward_predict(const TrainedDBN& model, const Evidence& x, int lookahead);

struct TrainingSet {
    std::vector<Evidence> evidence;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

TrainedDBN mle_complete_data(const NetworkTemplate& tmpl, const TrainingSet& data);

struct EmConfig {
    int max_iter = 200;
    double tol = 1e-6;  // relative log-likelihood improvement
    std::uint64_t seed = 0;
    /// Overrides the empirical class prevalence.
    std::optional<double> class_prior;
    /// Worker threads for the E-step; the reduction order is fixed, so results do not depend on it.
    int threads = 1;
};

TrainedDBN em_fit(const NetworkTemplate& tmpl, const TrainingSet& data, const EmConfig& config = {});

/// Ancestral sampling over a `horizon`-slice unroll.
TrainingSet sample(const TrainedDBN& model, int horizon, std::size_t n, std::uint64_t seed);

}  // namespace trd
