#include "txg/binary_io.hpp"
#include "txg/communities.hpp"
#include "txg/parallel.hpp"

#include <algorithm>
#include <map>

namespace txg {

namespace {

constexpr double kWeightFloor = 1e-12;

struct Candidate {
  NodeId node;
  double mass;
};

// One hop of damped walk mass from `frontier` along out-edges (forward) or
// in-edges (backward), keeping the top_k candidates by mass.
std::vector<Candidate> expand(const AggregatedGraph& ag, const std::vector<Candidate>& frontier, bool forward,
                              const EgoParams& p) {
  std::vector<Candidate> contributions;
  for (const auto& [u, mass] : frontier) {
    double total = 0.0;
    auto visit = [&](auto&& fn) {
      if (forward) {
        for (std::size_t e = ag.out_begin(u); e < ag.out_end(u); ++e) fn(ag.target[e], ag.weight[e]);
      } else {
        for (std::size_t e : ag.in_edges(u)) fn(ag.source[e], ag.weight[e]);
      }
    };
    visit([&](NodeId, double w) {
      if (w >= kWeightFloor) total += w;
    });
    if (total <= 0.0) continue;
    visit([&](NodeId v, double w) {
      if (w < kWeightFloor) return;
      contributions.push_back({v, (1.0 - p.restart) * mass * w / total});
    });
  }
  std::stable_sort(contributions.begin(), contributions.end(),
                   [](const Candidate& a, const Candidate& b) { return a.node < b.node; });
  std::vector<Candidate> merged;
  for (const auto& c : contributions) {
    if (!merged.empty() && merged.back().node == c.node)
      merged.back().mass += c.mass;
    else
      merged.push_back(c);
  }
  std::sort(merged.begin(), merged.end(), [](const Candidate& a, const Candidate& b) {
    return a.mass != b.mass ? a.mass > b.mass : a.node < b.node;
  });
  if (merged.size() > p.top_k_per_hop) merged.resize(p.top_k_per_hop);
  return merged;
}

}  // namespace

EgoCommunity ego_community(const AggregatedGraph& ag, NodeId seed, const EgoParams& p) {
  if (seed >= ag.node_count) throw DataError("ego_community: unknown seed " + std::to_string(seed));
  if (p.n_hops < 1) throw ConfigError("ego_community: n_hops must be >= 1");
  if (!(p.restart > 0 && p.restart < 1)) throw ConfigError("ego_community: restart must be in (0, 1)");
  if (p.max_size < 1) throw ConfigError("ego_community: max_size must be >= 1");

  std::map<NodeId, double> mass{{seed, 1.0}};
  for (const bool forward : {true, false}) {
    std::vector<Candidate> frontier{{seed, 1.0}};
    for (int hop = 0; hop < p.n_hops && !frontier.empty(); ++hop) {
      frontier = expand(ag, frontier, forward, p);
      for (const auto& c : frontier) mass[c.node] += c.mass;
    }
  }

  std::vector<Candidate> ranked;
  ranked.reserve(mass.size());
  for (const auto& [v, m] : mass)
    if (v != seed) ranked.push_back({v, m});
  if (ranked.size() + 1 > p.max_size) {
    std::sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) {
      return a.mass != b.mass ? a.mass > b.mass : a.node < b.node;
    });
    ranked.resize(p.max_size - 1);
  }
  ranked.push_back({seed, mass[seed]});
  std::sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) { return a.node < b.node; });

  EgoCommunity ego;
  ego.seed = seed;
  for (const auto& c : ranked) {
    ego.members.push_back(c.node);
    ego.member_rank.push_back(c.mass);
  }
  return ego;
}

std::vector<EgoCommunity> ego_communities(const AggregatedGraph& ag, std::span<const NodeId> seeds,
                                          const EgoParams& params, std::size_t workers) {
  return parallel_map<EgoCommunity>(seeds.size(), workers,
                                    [&](std::size_t i) { return ego_community(ag, seeds[i], params); });
}

std::string_view community_type_name(CommunityType t) { return t == CommunityType::Leiden ? "leiden" : "ego"; }

MembershipTable community_membership_table(const Partition& p, std::span<const EgoCommunity> egos) {
  MembershipTable t;
  std::vector<std::vector<NodeId>> buckets(p.community_count);
  for (NodeId v = 0; v < p.assignment.size(); ++v) buckets[p.assignment[v]].push_back(v);
  for (std::size_t c = 0; c < buckets.size(); ++c)
    for (NodeId v : buckets[c]) {
      t.community.push_back({CommunityType::Leiden, c});
      t.node.push_back(v);
    }
  for (const auto& ego : egos)
    for (NodeId v : ego.members) {
      t.community.push_back({CommunityType::Ego, ego.seed});
      t.node.push_back(v);
    }
  return t;
}

void write_membership_csv(const MembershipTable& t, std::ostream& out) {
  out << "community_id,type,node\n";
  for (std::size_t i = 0; i < t.size(); ++i)
    out << t.community[i].id << ',' << community_type_name(t.community[i].type) << ',' << t.node[i] << '\n';
}

std::vector<char> serialize_communities(const Partition& p, std::span<const EgoCommunity> egos) {
  io::Writer w;
  w.magic("TXGC", 1);
  w.array(p.assignment);
  w.pod<std::uint64_t>(p.community_count);
  w.pod(p.modularity_score);
  w.pod<std::uint64_t>(egos.size());
  for (const auto& e : egos) {
    w.pod(e.seed);
    w.array(e.members);
    w.array(e.member_rank);
  }
  return w.release();
}

std::pair<Partition, std::vector<EgoCommunity>> deserialize_communities(std::span<const char> bytes) {
  io::Reader r(bytes);
  if (r.magic("TXGC") != 1) throw DataError("unsupported community cache version");
  Partition p;
  p.assignment = r.array<std::uint32_t>();
  p.community_count = r.pod<std::uint64_t>();
  p.modularity_score = r.pod<double>();
  std::vector<EgoCommunity> egos(r.pod<std::uint64_t>());
  for (auto& e : egos) {
    e.seed = r.pod<NodeId>();
    e.members = r.array<NodeId>();
    e.member_rank = r.array<double>();
  }
  return {std::move(p), std::move(egos)};
}

}  // namespace txg
