#pragma once

#include "txg/common.hpp"

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <json.hpp>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace txg {

struct Transaction {
  TxId tx_id = 0;
  Timestamp timestamp = 0;
  NodeId source = 0;
  NodeId target = 0;
  double amount = 0.0;
  std::uint8_t label = 0;

  bool operator==(const Transaction&) const = default;
};

/// Bidirectional raw account string <-> dense id map.
class IdMap {
 public:
  NodeId intern(std::string_view raw);
  const std::string& name(NodeId id) const { return names_.at(id); }
  std::optional<NodeId> find(std::string_view raw) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const IdMap& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, NodeId> ids_;
};

struct DatasetMeta {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  double illicit_rate = 0.0;
  double total_amount = 0.0;
  Timestamp min_timestamp = 0;
  Timestamp max_timestamp = 0;
  double timespan_days = 0.0;
  std::size_t self_loops = 0;  // rows with source == target; both graphs drop them

  bool operator==(const DatasetMeta&) const = default;
};

enum class Schema { IbmAml, EthPhishing, Generic };

Schema parse_schema(std::string_view name);
std::string_view schema_name(Schema s);

/// Canonical transaction table. Rows are sorted by timestamp, ties in file order.
///
/// Optional schema columns (payment format, currencies) travel in `extras` as
/// numeric codes, one value per row.
struct Dataset {
  std::vector<Transaction> transactions;
  IdMap ids;
  DatasetMeta meta;
  std::map<std::string, std::vector<double>> extras;

  std::size_t size() const { return transactions.size(); }
  std::size_t node_count() const { return ids.size(); }

  bool operator==(const Dataset&) const = default;
};

Dataset parse_transactions(const std::filesystem::path& path, Schema schema);
Dataset parse_transactions(std::istream& in, Schema schema, std::string_view source_name = "<stream>");

/// Builds a dataset from already-typed rows (ids must be dense). Sorts and fills meta.
Dataset make_dataset(std::vector<Transaction> rows, IdMap ids);

DatasetMeta dataset_stats(const Dataset& d);
nlohmann::json stats_json(const DatasetMeta& meta);

/// Writes the dataset in the `generic` CSV schema using raw account names.
void write_generic_csv(const Dataset& d, std::ostream& out);

// Columnar binary cache: "TXGD" + version, little-endian fixed-width columns.
std::vector<char> serialize_dataset(const Dataset& d);
Dataset deserialize_dataset(std::span<const char> bytes);
void write_dataset_cache(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset_cache(const std::filesystem::path& path);

enum class SplitMode { TransactionTemporal, AccountTemporal };

struct SplitSpec {
  SplitMode mode = SplitMode::TransactionTemporal;
  double train = 0.6;
  double valid = 0.2;
};

enum class SplitPart : std::uint8_t { Train = 0, Valid = 1, Test = 2 };

/// Row-index view of a split, plus per-account assignment in account mode.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
  std::vector<SplitPart> row_part;
  // Account mode only.
  std::vector<NodeId> train_accounts;
  std::vector<NodeId> valid_accounts;
  std::vector<NodeId> test_accounts;
  std::vector<SplitPart> account_part;
};

/// Pure index cut at floor(train*n) and floor((train+valid)*n).
Split temporal_split(const Dataset& d, const SplitSpec& spec);

/// Accounts ordered by (first timestamp, id) are cut into train/valid/test.
/// Each transaction goes to the latest split among its two endpoints.
Split account_temporal_split(const Dataset& d, const SplitSpec& spec);

Split make_split(const Dataset& d, const SplitSpec& spec);

/// Cut points of an index range for the given fractions.
std::pair<std::size_t, std::size_t> split_cut_points(std::size_t n, double train, double valid);

/// Parses "YYYY/MM/DD HH:MM[:SS]" (UTC) or a plain integer into epoch seconds.
Timestamp parse_timestamp(std::string_view field);

}  // namespace txg
