#include "iqbo/cmets_tree.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace iqbo::cmets {

PartitionTree::PartitionTree(Box domain, int branching, int max_depth)
    : domain_(std::move(domain)), branching_(branching), max_depth_(max_depth)
{
    const auto d = domain_.dim();
    if (d == 0 || domain_.upper.size() != domain_.lower.size())
        throw std::invalid_argument("PartitionTree: malformed domain");
    if (!((domain_.width().array() > 0.0).all()))
        throw std::invalid_argument("PartitionTree: degenerate domain");
    if (d >= 31 || branching != (1 << d))
        throw std::invalid_argument("PartitionTree: branching must be 2^d for a d-dimensional domain");
    if (max_depth < 1)
        throw std::invalid_argument("PartitionTree: max_depth must be >= 1");
    nodes_.push_back(TreeNode{0, 0, domain_.center(), 0.5 * domain_.width(), std::nullopt, {}});
}

const std::vector<int>& PartitionTree::expand(int id)
{
    auto idx = static_cast<std::size_t>(id);
    if (idx >= nodes_.size())
        throw std::out_of_range("PartitionTree::expand: unknown node");
    if (nodes_[idx].depth >= max_depth_ || !nodes_[idx].children.empty())
        return nodes_[idx].children;

    const Vector center = nodes_[idx].center;
    const Vector half = 0.5 * nodes_[idx].radius;
    const int depth = nodes_[idx].depth + 1;
    std::vector<int> kids;
    kids.reserve(static_cast<std::size_t>(branching_));
    for (int k = 0; k < branching_; ++k) {
        Vector c = center;
        for (Eigen::Index axis = 0; axis < c.size(); ++axis)
            c(axis) += ((k >> axis) & 1) ? half(axis) : -half(axis);
        const int child_id = static_cast<int>(nodes_.size());
        nodes_.push_back(TreeNode{child_id, depth, std::move(c), half, id, {}});
        kids.push_back(child_id);
    }
    nodes_[idx].children = std::move(kids);
    return nodes_[idx].children;
}

CostSchedule CostSchedule::log_radius(int max_depth, double cost_scale, double noise_scale)
{
    CostSchedule s;
    for (int l = 0; l <= max_depth; ++l) {
        const double radius = std::ldexp(1.0, -(l + 1));
        const double cost = cost_scale * std::log2(1.0 / radius);
        s.cost.push_back(cost);
        s.noise_sd.push_back(noise_scale / cost);
        s.resolution.push_back(radius);
    }
    return s;
}

void CostSchedule::validate() const
{
    if (cost.empty() || cost.size() != noise_sd.size() || cost.size() != resolution.size())
        throw std::invalid_argument("CostSchedule: per-level lists must be non-empty and equal length");
    for (std::size_t l = 0; l < cost.size(); ++l) {
        if (!(cost[l] > 0.0) || !(noise_sd[l] > 0.0) || !(resolution[l] > 0.0))
            throw std::invalid_argument("CostSchedule: entries must be positive");
        if (l > 0 && (cost[l] < cost[l - 1] || noise_sd[l] > noise_sd[l - 1]))
            throw std::invalid_argument("CostSchedule: cost must not decrease and noise must not increase with depth");
    }
}

std::vector<int> ActiveSet::candidates() const
{
    std::set<int> all = leaves;
    all.insert(frontier.begin(), frontier.end());
    return {all.begin(), all.end()};
}

void BudgetState::debit(int node, double cost)
{
    remaining -= cost;
    spent += cost;
    ledger.emplace_back(node, cost);
}

std::pair<PartitionTree, ActiveSet> init_tree(const Box& domain, int branching, int max_depth)
{
    PartitionTree tree(domain, branching, max_depth);
    ActiveSet active;
    active.leaves.insert(0);
    for (int c : tree.expand(0))
        active.frontier.insert(c);
    return {std::move(tree), std::move(active)};
}

CmetsState::CmetsState(Box domain, int branching, int max_depth, CostSchedule schedule, double budget)
    : tree_(domain, branching, max_depth), schedule_(std::move(schedule)), budget_(budget)
{
    schedule_.validate();
    if (schedule_.levels() < max_depth + 1)
        throw std::invalid_argument("CmetsState: schedule must cover every depth up to max_depth");
    auto [tree, active] = init_tree(domain, branching, max_depth);
    tree_ = std::move(tree);
    active_ = std::move(active);
}

double CmetsState::cost_of(int id) const
{
    return schedule_.cost.at(static_cast<std::size_t>(tree_.node(id).depth));
}

double CmetsState::noise_sd_of(int id) const
{
    return schedule_.noise_sd.at(static_cast<std::size_t>(tree_.node(id).depth));
}

std::vector<int> CmetsState::affordable_candidates() const
{
    std::vector<int> out;
    if (budget_.remaining <= 0.0)
        return out;
    for (int id : candidates())
        if (cost_of(id) <= budget_.remaining)
            out.push_back(id);
    return out;
}

StepResult CmetsState::step(const std::vector<double>& scores)
{
    const auto cands = candidates();
    if (cands.empty())
        return {StepStatus::NoCandidates, -1};
    if (scores.size() != cands.size())
        throw std::invalid_argument("CmetsState::step: one score per candidate required");
    if (budget_.remaining <= 0.0)
        return {StepStatus::BudgetExhausted, -1};

    int best = -1;
    double best_ratio = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const double cost = cost_of(cands[i]);
        if (cost > budget_.remaining)
            continue;
        const double ratio = scores[i] / cost;
        if (best < 0 || ratio > best_ratio) {
            best = cands[i];
            best_ratio = ratio;
        }
    }
    if (best < 0)
        return {StepStatus::BudgetExhausted, -1};
    apply(best);
    return {StepStatus::Selected, best};
}

void CmetsState::apply(int selected)
{
    if (active_.frontier.contains(selected)) {
        // Choosing a frontier node splits its parent: the parent's cell is replaced by its
        // K children, the selected node among them.
        const int parent = *tree_.node(selected).parent;
        active_.leaves.erase(parent);
        for (int c : tree_.expand(parent)) {
            active_.leaves.insert(c);
            active_.frontier.erase(c);
        }
    } else if (active_.leaves.contains(selected)) {
        const auto kids = tree_.expand(selected);
        if (!kids.empty()) {
            active_.leaves.erase(selected);
            for (int c : kids) {
                active_.leaves.insert(c);
                active_.frontier.erase(c);
            }
        }
    } else {
        throw std::invalid_argument("CmetsState::apply: node is not a candidate");
    }
    refresh_frontier();
    budget_.debit(selected, cost_of(selected));
}

void CmetsState::refresh_frontier()
{
    const std::vector<int> leaves(active_.leaves.begin(), active_.leaves.end());
    for (int leaf : leaves)
        for (int c : tree_.expand(leaf))
            active_.frontier.insert(c);
}

void CmetsState::check_invariants() const
{
    auto fail = [](const std::string& what) { throw std::logic_error("CMETS invariant violated: " + what); };

    for (int id : active_.frontier) {
        if (active_.leaves.contains(id))
            fail("leaves and frontier overlap");
        const auto& p = tree_.node(id).parent;
        if (!p || !active_.leaves.contains(*p))
            fail("frontier node whose parent is not a leaf");
    }
    std::set<int> expected;
    for (int leaf : active_.leaves)
        for (int c : tree_.node(leaf).children)
            expected.insert(c);
    if (expected != active_.frontier)
        fail("frontier differs from the children of the leaves");

    // Nodes of one tree are nested or interior-disjoint, so the leaves tile the domain iff no
    // leaf is an ancestor of another and their measures add up.
    double measure = 0.0;
    for (int leaf : active_.leaves) {
        measure += tree_.node(leaf).cell().measure();
        for (auto p = tree_.node(leaf).parent; p; p = tree_.node(*p).parent)
            if (active_.leaves.contains(*p))
                fail("leaf nested inside another leaf");
    }
    const double total = tree_.domain().measure();
    if (std::abs(measure - total) > 1e-12 * total) {
        std::ostringstream msg;
        msg << "leaf measure " << measure << " != domain measure " << total;
        fail(msg.str());
    }

    double ledger = 0.0;
    for (const auto& entry : budget_.ledger)
        ledger += entry.second;
    if (ledger != budget_.spent || budget_.spent + budget_.remaining != budget_.initial)
        fail("budget ledger out of balance");
}

} // namespace iqbo::cmets
