#ifndef IQBO_CMETS_TREE_HPP
#define IQBO_CMETS_TREE_HPP

#include "iqbo/common.hpp"

#include <optional>
#include <set>
#include <utility>

namespace iqbo::cmets {

struct TreeNode {
    int id = 0;
    int depth = 0;
    Vector center;
    /// Cell half-width per axis.
    Vector radius;
    std::optional<int> parent;
    /// Empty until the node is expanded, then exactly K entries.
    std::vector<int> children;

    Box cell() const { return {center - radius, center + radius}; }
};

/// K-ary spatial partition of an axis-aligned box, K = 2^d: every split bisects every axis.
/// Children are created on demand and keep stable ids.
class PartitionTree {
public:
    PartitionTree(Box domain, int branching, int max_depth);

    const Box& domain() const { return domain_; }
    int branching() const { return branching_; }
    int max_depth() const { return max_depth_; }
    std::size_t size() const { return nodes_.size(); }

    const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    bool at_max_depth(int id) const { return node(id).depth >= max_depth_; }

    /// Children of `id`, materializing them if needed. Empty for max-depth nodes.
    const std::vector<int>& expand(int id);

private:
    Box domain_;
    int branching_;
    int max_depth_;
    std::vector<TreeNode> nodes_;
};

/// Per-depth cost, observation noise sd and resolution.
struct CostSchedule {
    std::vector<double> cost;
    std::vector<double> noise_sd;
    std::vector<double> resolution;

    /// cost(l) = cost_scale * log2(1 / d(l)), noise sd = noise_scale / cost(l),
    /// resolution = d(l), with d(l) = 2^{-(l+1)} the half-width on the unit domain.
    static CostSchedule log_radius(int max_depth, double cost_scale = 0.5, double noise_scale = 0.5);

    int levels() const { return static_cast<int>(cost.size()); }
    /// Throws unless cost is non-decreasing and positive, noise non-increasing and positive.
    void validate() const;
};

/// Leaves L, frontier L' (unexpanded children of leaves); candidates are L u L'.
struct ActiveSet {
    std::set<int> leaves;
    std::set<int> frontier;

    std::vector<int> candidates() const;
};

struct BudgetState {
    double initial = 0.0;
    double remaining = 0.0;
    double spent = 0.0;
    std::vector<std::pair<int, double>> ledger;

    explicit BudgetState(double budget = 0.0) : initial(budget), remaining(budget) {}
    void debit(int node, double cost);
};

enum class StepStatus { Selected, BudgetExhausted, NoCandidates };

struct StepResult {
    StepStatus status = StepStatus::Selected;
    int node = -1;
};

/// Tree, active set and budget for one budgeted hierarchical search.
class CmetsState {
public:
    CmetsState(Box domain, int branching, int max_depth, CostSchedule schedule, double budget);

    const PartitionTree& tree() const { return tree_; }
    const ActiveSet& active() const { return active_; }
    const BudgetState& budget() const { return budget_; }
    const CostSchedule& schedule() const { return schedule_; }

    double cost_of(int id) const;
    double noise_sd_of(int id) const;

    /// Current candidate ids in ascending order.
    std::vector<int> candidates() const { return active_.candidates(); }
    /// Candidates whose cost fits in the remaining budget.
    std::vector<int> affordable_candidates() const;

    /// Select argmax score / cost over affordable candidates (`scores` aligned with
    /// candidates()), lowest id on ties, then apply the set update and debit the budget.
    StepResult step(const std::vector<double>& scores);

    /// Set update and budget debit for an externally chosen candidate.
    void apply(int selected);

    /// Throws std::logic_error describing the first violated structural law.
    void check_invariants() const;

private:
    void refresh_frontier();

    PartitionTree tree_;
    CostSchedule schedule_;
    ActiveSet active_;
    BudgetState budget_;
};

/// Fresh tree and active set: L0 = {root}, L0' = children(root).
std::pair<PartitionTree, ActiveSet> init_tree(const Box& domain, int branching, int max_depth);

} // namespace iqbo::cmets

#endif
