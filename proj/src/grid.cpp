#include "adg/grid.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "json.hpp"

namespace adg {

using nlohmann::json;

namespace {

BusKind parse_kind(const std::string& s) {
    if (s == "slack") return BusKind::slack;
    if (s == "load") return BusKind::load;
    if (s == "junction") return BusKind::junction;
    throw InputError("unknown bus kind '" + s + "'");
}

void validate_and_orient(GridTopology& t) {
    const int n = t.n_bus();
    if (n < 2) throw InputError("topology needs at least two buses");

    std::set<int> ids;
    int slack_count = 0;
    for (const auto& b : t.buses) {
        if (!ids.insert(b.id).second)
            throw InputError("duplicate bus id " + std::to_string(b.id));
        if (b.kind == BusKind::slack) ++slack_count;
    }
    if (slack_count == 0) throw InputError("missing slack bus");
    if (slack_count > 1) throw InputError("more than one slack bus");
    for (int i = 1; i <= n; ++i)
        if (!ids.count(i))
            throw InputError("bus ids must be contiguous from 1; missing " +
                             std::to_string(i));
    std::sort(t.buses.begin(), t.buses.end(),
              [](const Bus& a, const Bus& b) { return a.id < b.id; });
    if (t.buses[0].kind != BusKind::slack)
        throw InputError("bus 1 must be the slack bus");

    std::set<int> bids;
    for (const auto& br : t.branches) {
        if (!bids.insert(br.id).second)
            throw InputError("duplicate branch id " + std::to_string(br.id));
        if (br.from < 1 || br.from > n || br.to < 1 || br.to > n)
            throw InputError("branch " + std::to_string(br.id) +
                             " references unknown bus");
        if (br.z.real() < 0.0)
            throw InputError("branch " + std::to_string(br.id) +
                             " has negative resistance");
    }
    if (t.n_branch() > n - 1)
        throw InputError("non-radial: graph has a cycle (" +
                         std::to_string(t.n_branch()) + " branches, " +
                         std::to_string(n) + " buses)");
    std::sort(t.branches.begin(), t.branches.end(),
              [](const Branch& a, const Branch& b) { return a.id < b.id; });
    for (int i = 0; i < t.n_branch(); ++i)
        if (t.branches[i].id != i + 1)
            throw InputError("branch ids must be contiguous from 1");

    // BFS from the slack; orient each branch parent -> child and detect
    // cycles / disconnected buses.
    std::vector<std::vector<int>> adj(n + 1);  // branch indices
    for (int i = 0; i < t.n_branch(); ++i) {
        adj[t.branches[i].from].push_back(i);
        adj[t.branches[i].to].push_back(i);
    }
    t.parent.assign(n + 1, -1);
    t.parent_branch.assign(n + 1, 0);
    t.depth.assign(n + 1, 0);
    t.parent[1] = 0;
    std::queue<int> q;
    q.push(1);
    int visited = 1;
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int bi : adj[u]) {
            auto& br = t.branches[bi];
            const int v = (br.from == u) ? br.to : br.from;
            if (t.parent[v] != -1) {
                if (v != t.parent[u] || t.parent_branch[u] != br.id)
                    throw InputError("non-radial: cycle through branch " +
                                     std::to_string(br.id));
                continue;
            }
            if (br.from != u) std::swap(br.from, br.to);
            t.parent[v] = u;
            t.parent_branch[v] = br.id;
            t.depth[v] = t.depth[u] + 1;
            ++visited;
            q.push(v);
        }
    }
    if (visited != n) {
        for (int v = 2; v <= n; ++v)
            if (t.parent[v] == -1)
                throw InputError("disconnected bus " + std::to_string(v));
    }

    if (t.oltc.tap_min > 0 || t.oltc.tap_max < 0)
        throw InputError("oltc tap range must contain 0");
    if (t.oltc.step_pu <= 0.0) throw InputError("oltc step must be positive");
}

}  // namespace

void build_sensitivity_matrices(GridTopology& t) {
    const int nb = t.n_branch();
    const int nn = t.n_bus() - 1;
    t.bibc = Eigen::MatrixXd::Zero(nb, nn);
    t.bcbv = Eigen::MatrixXcd::Zero(nn, nb);
    for (int bus = 2; bus <= t.n_bus(); ++bus) {
        int u = bus;
        while (u != 1) {
            const int br = t.parent_branch[u];
            t.bibc(br - 1, t.col(bus)) = 1.0;
            t.bcbv(t.col(bus), br - 1) = t.branches[br - 1].z;
            u = t.parent[u];
        }
    }
    t.r_sens = t.bcbv * t.bibc;
}

GridTopology load_topology(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw InputError(std::string("topology parse error: ") + e.what());
    }
    GridTopology t;
    try {
        t.s_base_kva = doc.at("s_base_kva").get<double>();
        t.v_base_kv = doc.at("v_base_kv").get<double>();
        for (const auto& jb : doc.at("buses")) {
            Bus b;
            b.id = jb.at("id").get<int>();
            b.kind = parse_kind(jb.at("kind").get<std::string>());
            b.base_kv = jb.value("base_kv", t.v_base_kv);
            t.buses.push_back(b);
        }
        for (const auto& jb : doc.at("branches")) {
            Branch br;
            br.id = jb.at("id").get<int>();
            br.from = jb.at("from").get<int>();
            br.to = jb.at("to").get<int>();
            br.z = Complex(jb.at("r_pu").get<double>(), jb.at("x_pu").get<double>());
            br.i_max = jb.value("i_max_pu", 1.0);
            t.branches.push_back(br);
        }
        if (doc.contains("oltc")) {
            const auto& jo = doc["oltc"];
            t.oltc.step_pu = jo.value("step_pu", 0.00625);
            t.oltc.tap_min = jo.value("min", -4);
            t.oltc.tap_max = jo.value("max", 4);
            t.oltc.v_slack = Complex(jo.value("v_slack_pu", 1.0), 0.0);
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("topology schema error: ") + e.what());
    }
    validate_and_orient(t);
    build_sensitivity_matrices(t);
    return t;
}

Eigen::VectorXcd path_voltage_drop_oracle(const GridTopology& t,
                                          const Eigen::VectorXcd& branch_currents) {
    if (branch_currents.size() != t.n_branch())
        throw ModelError("oracle: wrong current vector length");
    Eigen::VectorXcd drop(t.n_bus() - 1);
    for (int bus = 2; bus <= t.n_bus(); ++bus) {
        Complex acc{0.0, 0.0};
        int u = bus;
        while (u != 1) {
            const int br = t.parent_branch[u];
            acc += t.branches[br - 1].z * branch_currents[br - 1];
            u = t.parent[u];
        }
        drop[t.col(bus)] = acc;
    }
    return drop;
}

}  // namespace adg
