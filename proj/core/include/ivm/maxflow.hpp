#pragma once

#include <cstdint>
#include <vector>

namespace ivm {

/// Capacitated s-t flow network on integer capacities. max_flow runs Dinic's
/// augmenting-path scheme (BFS level graph + blocking flow); afterwards the
/// min-cut side of every node can be queried, with the max-flow = min-cut
/// value as the certificate.
class FlowNetwork {
public:
    explicit FlowNetwork(int num_nodes);

    /// Directed edge with capacity `cap` and reverse capacity `rev_cap`
    /// (both must be >= 0).
    void add_edge(int from, int to, int64_t cap, int64_t rev_cap = 0);

    int64_t max_flow(int source, int sink);

    /// Valid after max_flow: true when the node is reachable from the source
    /// in the residual graph (the source side of a minimum cut).
    bool on_source_side(int node) const;

    int num_nodes() const { return static_cast<int>(head_.size()); }

private:
    struct Edge {
        int to;
        int64_t cap;
        int rev;  // index of the reverse edge in adj_[to]
    };

    bool bfs_levels(int source, int sink);
    int64_t push(int node, int sink, int64_t limit);

    std::vector<std::vector<Edge>> adj_;
    std::vector<int> head_;   // per-node DFS cursor
    std::vector<int> level_;
    std::vector<char> reachable_;
};

}  // namespace ivm
