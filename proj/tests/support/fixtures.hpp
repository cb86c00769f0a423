#pragma once

#include "txg/communities.hpp"
#include "txg/ingest.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace txg::fixture {

/// Random transactions over `nodes` accounts named "a<i>". Amounts are small
/// integers so sums are exact; self-loops are excluded unless requested.
Dataset random_dataset(std::size_t nodes, std::size_t edges, std::uint64_t seed, Timestamp time_span = 1000,
                       bool allow_self_loops = false);

struct EconomyParams {
  std::size_t transactions = 50000;
  std::size_t accounts = 5000;
  double illicit_rate = 0.005;
  int days = 30;
  std::uint64_t seed = 7;
};

/// Synthetic payment economy: companies pay wages, individuals buy from
/// merchants and pay each other. Laundering schemes are injected as a source
/// fanning out to a few mules, each mule forwarding most of its receipt to a
/// common collector within hours. Only scheme transactions are labelled 1.
Dataset synthetic_economy(const EconomyParams& p);

/// `count` communities of uniform random size in [min_size, max_size] over
/// `node_count` nodes, keyed Ego with consecutive ids.
MembershipTable random_communities(std::size_t count, std::size_t node_count, std::size_t min_size,
                                   std::size_t max_size, std::uint64_t seed);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace txg::fixture
