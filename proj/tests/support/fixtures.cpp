#include "fixtures.hpp"

#include "txg/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace txg::fixture {

namespace {

IdMap named_ids(std::size_t n, const std::string& prefix) {
  IdMap ids;
  for (std::size_t i = 0; i < n; ++i) ids.intern(prefix + std::to_string(i));
  return ids;
}

double normal(Rng& rng) {
  // Box-Muller on our own uniform helper keeps results library independent.
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double lognormal_amount(Rng& rng, double median, double sigma) {
  return std::round(median * std::exp(sigma * normal(rng)) * 100.0) / 100.0 + 0.01;
}

}  // namespace

Dataset random_dataset(std::size_t nodes, std::size_t edges, std::uint64_t seed, Timestamp time_span,
                       bool allow_self_loops) {
  Rng rng(seed);
  std::vector<Transaction> rows;
  rows.reserve(edges);
  for (std::size_t e = 0; e < edges; ++e) {
    Transaction t;
    t.tx_id = static_cast<TxId>(e);
    t.source = static_cast<NodeId>(uniform_index(rng, nodes));
    do {
      t.target = static_cast<NodeId>(uniform_index(rng, nodes));
    } while (!allow_self_loops && nodes > 1 && t.target == t.source);
    t.amount = static_cast<double>(1 + uniform_index(rng, 100));
    t.timestamp = static_cast<Timestamp>(uniform_index(rng, static_cast<std::uint64_t>(time_span)));
    t.label = uniform_index(rng, 10) == 0 ? 1 : 0;
    rows.push_back(t);
  }
  return make_dataset(std::move(rows), named_ids(nodes, "a"));
}

Dataset synthetic_economy(const EconomyParams& p) {
  Rng rng(p.seed);
  const Timestamp t0 = 1'600'000'000;
  const Timestamp span = static_cast<Timestamp>(p.days) * 86400;

  // Laundering schemes use their own accounts: source, mules, collector.
  const auto illicit_target = static_cast<std::size_t>(std::llround(p.illicit_rate * static_cast<double>(p.transactions)));
  struct Scheme {
    NodeId source, collector;
    std::vector<NodeId> mules;
  };
  std::vector<Scheme> schemes;
  std::size_t illicit_count = 0;
  std::size_t next_id = p.accounts;
  while (illicit_count < illicit_target) {
    Scheme s;
    const std::size_t k = 3 + uniform_index(rng, 4);
    s.source = static_cast<NodeId>(next_id++);
    for (std::size_t i = 0; i < k; ++i) s.mules.push_back(static_cast<NodeId>(next_id++));
    s.collector = static_cast<NodeId>(next_id++);
    illicit_count += 2 * k;
    schemes.push_back(std::move(s));
  }
  const std::size_t total_accounts = next_id;

  // Regular population: 5% companies, 15% merchants, the rest individuals.
  const std::size_t companies = std::max<std::size_t>(1, p.accounts / 20);
  const std::size_t merchants = std::max<std::size_t>(1, p.accounts * 3 / 20);
  auto company = [&](std::uint64_t i) { return static_cast<NodeId>(i % companies); };
  auto merchant = [&](std::uint64_t i) { return static_cast<NodeId>(companies + i % merchants); };
  const std::size_t first_person = companies + merchants;
  const std::size_t persons = p.accounts - first_person;
  auto person = [&](std::uint64_t i) { return static_cast<NodeId>(first_person + i % persons); };

  std::vector<NodeId> employer(total_accounts);
  for (std::size_t v = 0; v < total_accounts; ++v) employer[v] = company(uniform_index(rng, companies));
  // Each individual favours a handful of merchants and friends.
  std::vector<std::array<NodeId, 4>> shops(total_accounts), friends(total_accounts);
  for (std::size_t v = 0; v < total_accounts; ++v)
    for (int j = 0; j < 4; ++j) {
      shops[v][static_cast<std::size_t>(j)] = merchant(uniform_index(rng, merchants));
      friends[v][static_cast<std::size_t>(j)] = person(uniform_index(rng, persons));
    }

  std::vector<Transaction> rows;
  rows.reserve(p.transactions + illicit_count);
  auto emit = [&](NodeId s, NodeId t, double amount, Timestamp ts, std::uint8_t label) {
    if (s == t) return;
    rows.push_back({0, std::clamp<Timestamp>(ts, t0, t0 + span - 1), s, t, amount, label});
  };

  for (const auto& s : schemes) {
    const Timestamp start = t0 + static_cast<Timestamp>(uniform_index(rng, static_cast<std::uint64_t>(span - 3 * 86400)));
    for (const NodeId m : s.mules) {
      const double amount = lognormal_amount(rng, 400.0, 0.8);
      const Timestamp in_ts = start + static_cast<Timestamp>(uniform_index(rng, 7200));
      emit(s.source, m, amount, in_ts, 1);
      const double kept = 0.9 + 0.09 * uniform01(rng);
      emit(m, s.collector, std::round(amount * kept * 100.0) / 100.0,
           in_ts + 3600 + static_cast<Timestamp>(uniform_index(rng, 12 * 3600)), 1);
    }
  }

  // Scheme accounts also make a few ordinary purchases as camouflage.
  for (std::size_t v = p.accounts; v < total_accounts; ++v) {
    const auto n = uniform_index(rng, 3);
    for (std::uint64_t i = 0; i < n; ++i)
      emit(static_cast<NodeId>(v), shops[v][uniform_index(rng, 4)], lognormal_amount(rng, 40.0, 0.9),
           t0 + static_cast<Timestamp>(uniform_index(rng, static_cast<std::uint64_t>(span))), 0);
  }

  while (rows.size() < p.transactions + illicit_count) {
    const Timestamp ts = t0 + static_cast<Timestamp>(uniform_index(rng, static_cast<std::uint64_t>(span)));
    const double kind = uniform01(rng);
    if (kind < 0.12) {
      const NodeId w = person(uniform_index(rng, persons));
      emit(employer[w], w, lognormal_amount(rng, 900.0, 0.5), ts, 0);
    } else if (kind < 0.62) {
      const NodeId b = person(uniform_index(rng, persons));
      const NodeId shop = uniform01(rng) < 0.8 ? shops[b][uniform_index(rng, 4)] : merchant(uniform_index(rng, merchants));
      emit(b, shop, lognormal_amount(rng, 40.0, 0.9), ts, 0);
    } else if (kind < 0.82) {
      const NodeId a = person(uniform_index(rng, persons));
      const NodeId f = uniform01(rng) < 0.7 ? friends[a][uniform_index(rng, 4)] : person(uniform_index(rng, persons));
      emit(a, f, lognormal_amount(rng, 150.0, 1.0), ts, 0);
    } else if (kind < 0.94) {
      const NodeId m = merchant(uniform_index(rng, merchants));
      emit(m, company(uniform_index(rng, companies)), lognormal_amount(rng, 2000.0, 0.7), ts, 0);
    } else {
      const NodeId c = company(uniform_index(rng, companies));
      emit(c, company(uniform_index(rng, companies)), lognormal_amount(rng, 5000.0, 0.8), ts, 0);
    }
  }

  // Interleave scheme rows with the rest by timestamp; ids follow that order.
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Transaction& a, const Transaction& b) { return a.timestamp < b.timestamp; });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].tx_id = static_cast<TxId>(i);

  // Shuffle account names so scheme accounts are not recognisable by id.
  std::vector<NodeId> perm(total_accounts);
  std::iota(perm.begin(), perm.end(), NodeId{0});
  shuffle(perm, rng);
  for (auto& t : rows) {
    t.source = perm[t.source];
    t.target = perm[t.target];
  }
  return make_dataset(std::move(rows), named_ids(total_accounts, "acct"));
}

MembershipTable random_communities(std::size_t count, std::size_t node_count, std::size_t min_size,
                                   std::size_t max_size, std::uint64_t seed) {
  Rng rng(seed);
  MembershipTable t;
  std::vector<NodeId> members;
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t size = min_size + uniform_index(rng, max_size - min_size + 1);
    members.clear();
    // Seed node plus a neighbourhood-sized random window keeps slices non-trivial.
    const std::size_t base = uniform_index(rng, node_count);
    for (std::size_t i = 0; i < size; ++i)
      members.push_back(static_cast<NodeId>((base + uniform_index(rng, 4 * size)) % node_count));
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    for (NodeId v : members) {
      t.community.push_back({CommunityType::Ego, c});
      t.node.push_back(v);
    }
  }
  return t;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("txg-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace txg::fixture
