#include "ivm/maxflow.hpp"

#include <limits>
#include <queue>
#include <stdexcept>

namespace ivm {

FlowNetwork::FlowNetwork(int num_nodes) {
    if (num_nodes < 2) throw std::invalid_argument("FlowNetwork: need at least 2 nodes");
    adj_.resize(static_cast<size_t>(num_nodes));
    head_.assign(static_cast<size_t>(num_nodes), 0);
    level_.assign(static_cast<size_t>(num_nodes), -1);
    reachable_.assign(static_cast<size_t>(num_nodes), 0);
}

void FlowNetwork::add_edge(int from, int to, int64_t cap, int64_t rev_cap) {
    if (from < 0 || from >= num_nodes() || to < 0 || to >= num_nodes() || from == to) {
        throw std::invalid_argument("FlowNetwork: bad edge endpoints");
    }
    if (cap < 0 || rev_cap < 0) {
        throw std::invalid_argument("FlowNetwork: negative capacity");
    }
    adj_[from].push_back({to, cap, static_cast<int>(adj_[to].size())});
    adj_[to].push_back({from, rev_cap, static_cast<int>(adj_[from].size()) - 1});
}

bool FlowNetwork::bfs_levels(int source, int sink) {
    std::fill(level_.begin(), level_.end(), -1);
    std::queue<int> queue;
    level_[source] = 0;
    queue.push(source);
    while (!queue.empty()) {
        const int u = queue.front();
        queue.pop();
        for (const Edge& e : adj_[u]) {
            if (e.cap > 0 && level_[e.to] < 0) {
                level_[e.to] = level_[u] + 1;
                queue.push(e.to);
            }
        }
    }
    return level_[sink] >= 0;
}

int64_t FlowNetwork::push(int node, int sink, int64_t limit) {
    if (node == sink) return limit;
    for (int& i = head_[node]; i < static_cast<int>(adj_[node].size()); ++i) {
        Edge& e = adj_[node][i];
        if (e.cap > 0 && level_[e.to] == level_[node] + 1) {
            const int64_t sent = push(e.to, sink, std::min(limit, e.cap));
            if (sent > 0) {
                e.cap -= sent;
                adj_[e.to][e.rev].cap += sent;
                return sent;
            }
        }
    }
    return 0;
}

int64_t FlowNetwork::max_flow(int source, int sink) {
    if (source == sink) throw std::invalid_argument("FlowNetwork: source equals sink");
    int64_t total = 0;
    while (bfs_levels(source, sink)) {
        std::fill(head_.begin(), head_.end(), 0);
        while (int64_t sent = push(source, sink, std::numeric_limits<int64_t>::max())) {
            total += sent;
        }
    }
    // Min-cut side: residual reachability from the source.
    std::fill(reachable_.begin(), reachable_.end(), 0);
    std::queue<int> queue;
    reachable_[source] = 1;
    queue.push(source);
    while (!queue.empty()) {
        const int u = queue.front();
        queue.pop();
        for (const Edge& e : adj_[u]) {
            if (e.cap > 0 && !reachable_[e.to]) {
                reachable_[e.to] = 1;
                queue.push(e.to);
            }
        }
    }
    return total;
}

bool FlowNetwork::on_source_side(int node) const {
    return reachable_[static_cast<size_t>(node)] != 0;
}

}  // namespace ivm
