#include "txg/ingest.hpp"

#include "txg/binary_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

namespace txg {

NodeId IdMap::intern(std::string_view raw) {
  auto [it, inserted] = ids_.try_emplace(std::string(raw), static_cast<NodeId>(names_.size()));
  if (inserted) names_.emplace_back(raw);
  return it->second;
}

std::optional<NodeId> IdMap::find(std::string_view raw) const {
  auto it = ids_.find(std::string(raw));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

Schema parse_schema(std::string_view name) {
  if (name == "ibm_aml") return Schema::IbmAml;
  if (name == "eth_phishing") return Schema::EthPhishing;
  if (name == "generic") return Schema::Generic;
  throw ConfigError("unknown schema '" + std::string(name) + "' (expected ibm_aml, eth_phishing or generic)");
}

std::string_view schema_name(Schema s) {
  switch (s) {
    case Schema::IbmAml: return "ibm_aml";
    case Schema::EthPhishing: return "eth_phishing";
    case Schema::Generic: return "generic";
  }
  return "generic";
}

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line, std::string& scratch) {
  // Fast path: no quotes.
  std::vector<std::string_view> fields;
  if (line.find('"') == std::string_view::npos) {
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      if (comma == std::string_view::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    return fields;
  }
  // Quoted fields are unescaped into scratch; views point into it.
  scratch.clear();
  scratch.reserve(line.size());
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  bool quoted = false;
  std::size_t field_start = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        scratch.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        scratch.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      spans.emplace_back(field_start, scratch.size() - field_start);
      field_start = scratch.size();
    } else {
      scratch.push_back(c);
    }
  }
  spans.emplace_back(field_start, scratch.size() - field_start);
  for (auto [b, n] : spans) fields.emplace_back(scratch.data() + b, n);
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> to_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> to_int(std::string_view s) {
  s = trim(s);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

struct ColumnPlan {
  int timestamp = -1;
  int source = -1;
  int source_bank = -1;
  int target = -1;
  int target_bank = -1;
  int amount = -1;
  int label = -1;
  int tx_id = -1;
  // Pass-through columns: (column index, extras name, numeric?)
  std::vector<std::pair<int, std::string>> extras;
};

ColumnPlan plan_columns(const std::vector<std::string>& header, Schema schema) {
  auto find = [&](std::string_view name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw SchemaError("missing column '" + std::string(name) + "' for schema " + std::string(schema_name(schema)));
    return static_cast<int>(it - header.begin());
  };
  auto maybe = [&](std::string_view name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };

  ColumnPlan plan;
  switch (schema) {
    case Schema::IbmAml:
      plan.timestamp = find("Timestamp");
      plan.source_bank = find("From Bank");
      plan.source = find("Account");
      plan.target_bank = find("To Bank");
      plan.target = find("Account.1");
      find("Amount Received");
      find("Receiving Currency");
      plan.amount = find("Amount Paid");
      find("Payment Currency");
      find("Payment Format");
      plan.label = find("Is Laundering");
      plan.extras = {{find("Amount Received"), "amount_received"},
                     {find("Receiving Currency"), "receiving_currency"},
                     {find("Payment Currency"), "payment_currency"},
                     {find("Payment Format"), "payment_format"}};
      break;
    case Schema::EthPhishing:
      plan.timestamp = find("timestamp");
      plan.source = find("from_address");
      plan.target = find("to_address");
      plan.amount = find("value");
      plan.label = find("is_phishing");
      break;
    case Schema::Generic: {
      plan.timestamp = find("timestamp");
      plan.source = find("source");
      plan.target = find("target");
      plan.amount = find("amount");
      plan.label = find("label");
      plan.tx_id = maybe("tx_id");
      for (std::size_t i = 0; i < header.size(); ++i) {
        const int c = static_cast<int>(i);
        if (c == plan.timestamp || c == plan.source || c == plan.target || c == plan.amount || c == plan.label ||
            c == plan.tx_id)
          continue;
        plan.extras.emplace_back(c, header[i]);
      }
      break;
    }
  }
  return plan;
}

std::uint8_t parse_label(std::string_view s, std::size_t line) {
  s = trim(s);
  if (s == "0" || s == "False" || s == "false") return 0;
  if (s == "1" || s == "True" || s == "true") return 1;
  throw DataError("line " + std::to_string(line) + ": unparseable label '" + std::string(s) + "'");
}

void fill_meta(Dataset& d) {
  d.meta = DatasetMeta{};
  d.meta.nodes = d.ids.size();
  d.meta.edges = d.transactions.size();
  if (d.transactions.empty()) return;
  CompensatedSum<double> total;
  std::size_t illicit = 0;
  Timestamp lo = d.transactions.front().timestamp, hi = lo;
  for (const auto& t : d.transactions) {
    total.add(t.amount);
    illicit += t.label;
    d.meta.self_loops += t.source == t.target;
    lo = std::min(lo, t.timestamp);
    hi = std::max(hi, t.timestamp);
  }
  d.meta.total_amount = total.value();
  d.meta.illicit_rate = static_cast<double>(illicit) / static_cast<double>(d.transactions.size());
  d.meta.min_timestamp = lo;
  d.meta.max_timestamp = hi;
  d.meta.timespan_days = static_cast<double>(hi - lo) / 86400.0;
}

// Stable timestamp order; permutes extras alongside the rows.
void sort_rows(Dataset& d) {
  std::vector<std::size_t> order(d.transactions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return d.transactions[a].timestamp < d.transactions[b].timestamp;
  });
  if (std::is_sorted(order.begin(), order.end())) return;
  std::vector<Transaction> rows(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) rows[i] = d.transactions[order[i]];
  d.transactions = std::move(rows);
  for (auto& [name, col] : d.extras) {
    std::vector<double> c(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) c[i] = col[order[i]];
    col = std::move(c);
  }
}

}  // namespace

Timestamp parse_timestamp(std::string_view field) {
  field = trim(field);
  if (auto v = to_int(field)) return *v;
  // YYYY/MM/DD HH:MM[:SS] or YYYY-MM-DD HH:MM[:SS], interpreted as UTC.
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep1 = 0, sep2 = 0;
  std::string buf(field);
  const int got = std::sscanf(buf.c_str(), "%d%c%d%c%d %d:%d:%d", &y, &sep1, &mo, &sep2, &d, &h, &mi, &s);
  if (got < 5 || (sep1 != '/' && sep1 != '-') || sep1 != sep2) throw DataError("unparseable timestamp '" + buf + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw DataError("invalid date '" + buf + "'");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * 86400 + h * 3600 + mi * 60 + s;
}

Dataset parse_transactions(const std::filesystem::path& path, Schema schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_transactions(in, schema, path.string());
}

Dataset parse_transactions(std::istream& in, Schema schema, std::string_view source_name) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(std::string(source_name) + ": empty file, no header");
  std::string scratch;
  std::vector<std::string> header;
  for (auto f : split_csv_line(line, scratch)) {
    std::string name(trim(f));
    // Duplicate names get pandas-style ".1", ".2" suffixes (IBM files repeat "Account").
    std::string unique = name;
    for (int k = 1; std::find(header.begin(), header.end(), unique) != header.end(); ++k)
      unique = name + "." + std::to_string(k);
    header.push_back(unique);
  }
  const ColumnPlan plan = plan_columns(header, schema);

  Dataset d;
  IdMap file_ids;
  std::vector<std::unordered_map<std::string, double>> extra_codes(plan.extras.size());
  std::vector<std::vector<double>> extra_cols(plan.extras.size());
  std::string key;
  std::size_t line_no = 1;

  auto account_key = [&](const std::vector<std::string_view>& f, int bank, int acct) -> std::string_view {
    if (bank < 0) return trim(f[acct]);
    key.assign(trim(f[bank]));
    key.push_back('_');
    key.append(trim(f[acct]));
    return key;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line, scratch);
    if (f.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(f.size()));
    Transaction t;
    try {
      t.timestamp = parse_timestamp(f[plan.timestamp]);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto amount = to_double(f[plan.amount]);
    if (!amount || !std::isfinite(*amount) || *amount < 0)
      throw DataError("line " + std::to_string(line_no) + ": unparseable amount '" + std::string(f[plan.amount]) + "'");
    t.amount = *amount;
    t.label = parse_label(f[plan.label], line_no);
    t.source = file_ids.intern(account_key(f, plan.source_bank, plan.source));
    t.target = file_ids.intern(account_key(f, plan.target_bank, plan.target));
    if (plan.tx_id >= 0) {
      const auto id = to_int(f[plan.tx_id]);
      if (!id) throw DataError("line " + std::to_string(line_no) + ": unparseable tx_id");
      t.tx_id = *id;
    } else {
      t.tx_id = static_cast<TxId>(d.transactions.size());
    }
    for (std::size_t e = 0; e < plan.extras.size(); ++e) {
      const auto field = trim(f[plan.extras[e].first]);
      if (auto v = to_double(field)) {
        extra_cols[e].push_back(*v);
      } else {
        auto& codes = extra_codes[e];
        auto [it, _] = codes.try_emplace(std::string(field), static_cast<double>(codes.size()));
        extra_cols[e].push_back(it->second);
      }
    }
    d.transactions.push_back(t);
  }

  {
    std::vector<TxId> ids;
    ids.reserve(d.transactions.size());
    for (const auto& t : d.transactions) ids.push_back(t.tx_id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw DataError(std::string(source_name) + ": duplicate tx_id");
  }

  for (std::size_t e = 0; e < plan.extras.size(); ++e) d.extras[plan.extras[e].second] = std::move(extra_cols[e]);
  sort_rows(d);

  // Re-intern in sorted row order so ids do not depend on file order.
  std::vector<NodeId> remap(file_ids.size(), std::numeric_limits<NodeId>::max());
  for (auto& t : d.transactions) {
    for (NodeId* v : {&t.source, &t.target}) {
      if (remap[*v] == std::numeric_limits<NodeId>::max()) remap[*v] = d.ids.intern(file_ids.name(*v));
      *v = remap[*v];
    }
  }
  fill_meta(d);
  return d;
}

Dataset make_dataset(std::vector<Transaction> rows, IdMap ids) {
  Dataset d;
  d.transactions = std::move(rows);
  d.ids = std::move(ids);
  for (const auto& t : d.transactions)
    if (t.source >= d.ids.size() || t.target >= d.ids.size()) throw DataError("transaction references unknown account id");
  sort_rows(d);
  fill_meta(d);
  return d;
}

DatasetMeta dataset_stats(const Dataset& d) {
  if (d.transactions.empty()) throw DataError("dataset_stats: empty dataset");
  Dataset copy_meta;
  copy_meta.transactions = d.transactions;
  copy_meta.ids = d.ids;
  fill_meta(copy_meta);
  return copy_meta.meta;
}

nlohmann::json stats_json(const DatasetMeta& m) {
  return {{"nodes", m.nodes},
          {"edges", m.edges},
          {"illicit_rate", m.illicit_rate},
          {"total_amount", m.total_amount},
          {"min_timestamp", m.min_timestamp},
          {"max_timestamp", m.max_timestamp},
          {"timespan_days", m.timespan_days},
          {"self_loops", m.self_loops}};
}

void write_generic_csv(const Dataset& d, std::ostream& out) {
  out << "tx_id,timestamp,source,target,amount,label";
  for (const auto& [name, _] : d.extras) out << ',' << name;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < d.transactions.size(); ++i) {
    const auto& t = d.transactions[i];
    std::snprintf(buf, sizeof buf, "%.17g", t.amount);
    out << t.tx_id << ',' << t.timestamp << ',' << d.ids.name(t.source) << ',' << d.ids.name(t.target) << ',' << buf
        << ',' << int(t.label);
    for (const auto& [name, col] : d.extras) {
      std::snprintf(buf, sizeof buf, "%.17g", col[i]);
      out << ',' << buf;
    }
    out << '\n';
  }
}

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
}

std::vector<char> serialize_dataset(const Dataset& d) {
  io::Writer w;
  w.magic("TXGD", kDatasetVersion);
  const std::size_t n = d.transactions.size();
  std::vector<TxId> ids(n);
  std::vector<Timestamp> ts(n);
  std::vector<NodeId> src(n), tgt(n);
  std::vector<double> amt(n);
  std::vector<std::uint8_t> lab(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = d.transactions[i];
    ids[i] = t.tx_id;
    ts[i] = t.timestamp;
    src[i] = t.source;
    tgt[i] = t.target;
    amt[i] = t.amount;
    lab[i] = t.label;
  }
  w.array(ids);
  w.array(ts);
  w.array(src);
  w.array(tgt);
  w.array(amt);
  w.array(lab);
  w.pod<std::uint64_t>(d.ids.size());
  for (const auto& name : d.ids.names()) w.string(name);
  w.pod<std::uint64_t>(d.extras.size());
  for (const auto& [name, col] : d.extras) {
    w.string(name);
    w.array(col);
  }
  return w.release();
}

Dataset deserialize_dataset(std::span<const char> bytes) {
  io::Reader r(bytes);
  const auto version = r.magic("TXGD");
  if (version != kDatasetVersion) throw DataError("unsupported dataset cache version " + std::to_string(version));
  const auto ids = r.array<TxId>();
  const auto ts = r.array<Timestamp>();
  const auto src = r.array<NodeId>();
  const auto tgt = r.array<NodeId>();
  const auto amt = r.array<double>();
  const auto lab = r.array<std::uint8_t>();
  const std::size_t n = ids.size();
  if (ts.size() != n || src.size() != n || tgt.size() != n || amt.size() != n || lab.size() != n)
    throw DataError("dataset cache: column length mismatch");
  Dataset d;
  d.transactions.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.transactions[i] = {ids[i], ts[i], src[i], tgt[i], amt[i], lab[i]};
  const auto accounts = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < accounts; ++i) d.ids.intern(r.string());
  const auto extras = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < extras; ++i) {
    auto name = r.string();
    d.extras[name] = r.array<double>();
  }
  fill_meta(d);
  return d;
}

void write_dataset_cache(const Dataset& d, const std::filesystem::path& path) {
  const auto bytes = serialize_dataset(d);
  io::write_file(path, bytes);
}

Dataset read_dataset_cache(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return deserialize_dataset(bytes);
}

std::pair<std::size_t, std::size_t> split_cut_points(std::size_t n, double train, double valid) {
  if (!(train > 0 && valid > 0 && train + valid < 1))
    throw ConfigError("split fractions must satisfy 0 < train, 0 < valid, train + valid < 1");
  // The epsilon keeps products like 0.6 * 10 from flooring to 5.
  const auto cut = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  return {cut(train), cut(train + valid)};
}

Split temporal_split(const Dataset& d, const SplitSpec& spec) {
  const std::size_t n = d.transactions.size();
  if (n < 5) throw DataError("temporal_split: need at least 5 rows, got " + std::to_string(n));
  const auto [a, b] = split_cut_points(n, spec.train, spec.valid);
  if (a == 0 || b <= a || b >= n) throw DataError("temporal_split: fractions leave an empty split");
  Split s;
  s.row_part.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < a) {
      s.train.push_back(i);
      s.row_part[i] = SplitPart::Train;
    } else if (i < b) {
      s.valid.push_back(i);
      s.row_part[i] = SplitPart::Valid;
    } else {
      s.test.push_back(i);
      s.row_part[i] = SplitPart::Test;
    }
  }
  return s;
}

Split account_temporal_split(const Dataset& d, const SplitSpec& spec) {
  const std::size_t accounts = d.ids.size();
  std::vector<Timestamp> first(accounts, std::numeric_limits<Timestamp>::max());
  std::vector<bool> seen(accounts, false);
  for (const auto& t : d.transactions) {
    for (NodeId v : {t.source, t.target}) {
      first[v] = std::min(first[v], t.timestamp);
      seen[v] = true;
    }
  }
  std::vector<NodeId> order;
  for (NodeId v = 0; v < accounts; ++v)
    if (seen[v]) order.push_back(v);
  if (order.size() < 5) throw DataError("account_temporal_split: need at least 5 accounts, got " + std::to_string(order.size()));
  std::sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
    return first[a] != first[b] ? first[a] < first[b] : a < b;
  });
  const auto [a, b] = split_cut_points(order.size(), spec.train, spec.valid);
  if (a == 0 || b <= a || b >= order.size()) throw DataError("account_temporal_split: fractions leave an empty split");

  Split s;
  s.account_part.assign(accounts, SplitPart::Test);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const NodeId v = order[i];
    if (i < a) {
      s.train_accounts.push_back(v);
      s.account_part[v] = SplitPart::Train;
    } else if (i < b) {
      s.valid_accounts.push_back(v);
      s.account_part[v] = SplitPart::Valid;
    } else {
      s.test_accounts.push_back(v);
    }
  }
  s.row_part.resize(d.transactions.size());
  for (std::size_t i = 0; i < d.transactions.size(); ++i) {
    const auto& t = d.transactions[i];
    const auto part = std::max(s.account_part[t.source], s.account_part[t.target]);
    s.row_part[i] = part;
    (part == SplitPart::Train ? s.train : part == SplitPart::Valid ? s.valid : s.test).push_back(i);
  }
  return s;
}

Split make_split(const Dataset& d, const SplitSpec& spec) {
  return spec.mode == SplitMode::TransactionTemporal ? temporal_split(d, spec) : account_temporal_split(d, spec);
}

}  // namespace txg
