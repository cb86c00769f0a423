#include "txg/pipeline.hpp"

#include "txg/binary_io.hpp"
#include "txg/parallel.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

namespace txg {

// ---------------------------------------------------------------------------
// Config

namespace {

constexpr const char* kDefaults = R"(# Pipeline configuration. Every key is optional; the values below are the defaults.

[data]
# Transaction CSV. Relative paths resolve against the working directory.
path =
# ibm_aml, eth_phishing or generic
schema = generic

[split]
# transaction: chronological cut of the transaction list.
# account: accounts ordered by first activity are cut; each transaction goes to
# the latest split among its endpoints.
mode = transaction
# Fractions in (0, 1) with train + valid < 1.
train = 0.6
valid = 0.2

[communities]
# Leiden resolution (> 0), refinement randomness (> 0), seed, outer iterations (>= 1)
resolution = 1.0
randomness = 0.01
seed = 42
max_iterations = 10
# Ego expansion: hops per direction (>= 1), restart probability in (0, 1),
# candidates kept per hop (>= 1), members per community (>= 1)
n_hops = 2
restart = 0.15
top_k = 50
max_size = 500

[flow]
# Hops (>= 1) and frontier size (>= 1) of the flow recurrence
hops = 5
top_n = 50
# Account type thresholds, both in [0, 1]
theta_pass = 0.8
theta_ratio = 0.1
# Temporal flow: require strictly later continuations
strict_chronology = false

[features]
# Communities above this many members get an approximate diameter
exact_diameter_cap = 10000
# In-memory budget for community edge slices, in MiB; above it slices spill to disk
memory_budget_mb = 1024
# Upper bound on concurrent spill-store readers
max_spill_readers = 4

[anomaly]
trees = 100
sample_size = 256
seed = 42

[model]
rounds = 500
max_depth = 8
learning_rate = 0.1
early_stopping = 50
subsample = 0.8
colsample = 0.8
lambda = 1.0
min_child_weight = 1.0
max_bins = 255
# Weight positives by negatives / positives
balance_classes = true
# Feature groups used for training, in ablation order
groups = transaction,random_walk,modularity,flows,anomaly

[run]
# 0 means one worker per hardware thread
workers = 0
cache_dir = .txg-cache
# One model per seed; reports give mean and std over seeds
seeds = 1,2,3,4,5
)";

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto t = trim(v);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc{} || p != t.data() + t.size() || t.empty())
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

using Setter = std::function<void(PipelineConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> s = [] {
    std::map<std::string, Setter> m;
    auto num = [&m]<typename T>(const std::string& key, auto member) {
      m[key] = [key, member](PipelineConfig& c, const std::string& v) { member(c) = parse_number<T>(key, v); };
    };
    m["data.path"] = [](PipelineConfig& c, const std::string& v) { c.dataset = trim(v); };
    m["data.schema"] = [](PipelineConfig& c, const std::string& v) { c.schema = parse_schema(trim(v)); };
    m["split.mode"] = [](PipelineConfig& c, const std::string& v) {
      const auto t = trim(v);
      if (t == "transaction")
        c.split.mode = SplitMode::TransactionTemporal;
      else if (t == "account")
        c.split.mode = SplitMode::AccountTemporal;
      else
        throw ConfigError("config: split.mode must be transaction or account");
    };
    num.operator()<double>("split.train", [](PipelineConfig& c) -> double& { return c.split.train; });
    num.operator()<double>("split.valid", [](PipelineConfig& c) -> double& { return c.split.valid; });
    num.operator()<double>("communities.resolution", [](PipelineConfig& c) -> double& { return c.leiden.resolution; });
    num.operator()<double>("communities.randomness", [](PipelineConfig& c) -> double& { return c.leiden.randomness; });
    num.operator()<std::uint64_t>("communities.seed", [](PipelineConfig& c) -> std::uint64_t& { return c.leiden.seed; });
    num.operator()<int>("communities.max_iterations", [](PipelineConfig& c) -> int& { return c.leiden.max_iterations; });
    num.operator()<int>("communities.n_hops", [](PipelineConfig& c) -> int& { return c.ego.n_hops; });
    num.operator()<double>("communities.restart", [](PipelineConfig& c) -> double& { return c.ego.restart; });
    num.operator()<std::size_t>("communities.top_k", [](PipelineConfig& c) -> std::size_t& { return c.ego.top_k_per_hop; });
    num.operator()<std::size_t>("communities.max_size", [](PipelineConfig& c) -> std::size_t& { return c.ego.max_size; });
    num.operator()<int>("flow.hops", [](PipelineConfig& c) -> int& { return c.flow.hops; });
    num.operator()<std::size_t>("flow.top_n", [](PipelineConfig& c) -> std::size_t& { return c.flow.top_n; });
    num.operator()<double>("flow.theta_pass", [](PipelineConfig& c) -> double& { return c.flow.theta_pass; });
    num.operator()<double>("flow.theta_ratio", [](PipelineConfig& c) -> double& { return c.flow.theta_ratio; });
    m["flow.strict_chronology"] = [](PipelineConfig& c, const std::string& v) {
      c.flow.strict_chronology = parse_bool("flow.strict_chronology", v);
    };
    num.operator()<std::size_t>("features.exact_diameter_cap",
                                [](PipelineConfig& c) -> std::size_t& { return c.exact_diameter_cap; });
    m["features.memory_budget_mb"] = [](PipelineConfig& c, const std::string& v) {
      c.memory_budget_bytes = parse_number<std::size_t>("features.memory_budget_mb", v) << 20;
    };
    num.operator()<std::size_t>("features.max_spill_readers",
                                [](PipelineConfig& c) -> std::size_t& { return c.max_spill_readers; });
    num.operator()<std::size_t>("anomaly.trees", [](PipelineConfig& c) -> std::size_t& { return c.anomaly.trees; });
    num.operator()<std::size_t>("anomaly.sample_size", [](PipelineConfig& c) -> std::size_t& { return c.anomaly.sample_size; });
    num.operator()<std::uint64_t>("anomaly.seed", [](PipelineConfig& c) -> std::uint64_t& { return c.anomaly.seed; });
    num.operator()<int>("model.rounds", [](PipelineConfig& c) -> int& { return c.model.rounds; });
    num.operator()<int>("model.max_depth", [](PipelineConfig& c) -> int& { return c.model.max_depth; });
    num.operator()<double>("model.learning_rate", [](PipelineConfig& c) -> double& { return c.model.learning_rate; });
    num.operator()<int>("model.early_stopping", [](PipelineConfig& c) -> int& { return c.model.early_stopping; });
    num.operator()<double>("model.subsample", [](PipelineConfig& c) -> double& { return c.model.subsample; });
    num.operator()<double>("model.colsample", [](PipelineConfig& c) -> double& { return c.model.colsample; });
    num.operator()<double>("model.lambda", [](PipelineConfig& c) -> double& { return c.model.lambda; });
    num.operator()<double>("model.min_child_weight", [](PipelineConfig& c) -> double& { return c.model.min_child_weight; });
    num.operator()<int>("model.max_bins", [](PipelineConfig& c) -> int& { return c.model.max_bins; });
    m["model.balance_classes"] = [](PipelineConfig& c, const std::string& v) {
      c.model.balance_classes = parse_bool("model.balance_classes", v);
    };
    m["model.groups"] = [](PipelineConfig& c, const std::string& v) {
      c.groups.clear();
      for (const auto& g : split_list(v)) c.groups.push_back(parse_feature_group(g));
    };
    m["run.workers"] = [](PipelineConfig& c, const std::string& v) {
      const auto w = parse_number<std::size_t>("run.workers", v);
      c.workers = w == 0 ? default_workers() : w;
    };
    m["run.cache_dir"] = [](PipelineConfig& c, const std::string& v) { c.cache_dir = trim(v); };
    m["run.seeds"] = [](PipelineConfig& c, const std::string& v) {
      c.seeds.clear();
      for (const auto& s : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>("run.seeds", s));
    };
    return m;
  }();
  return s;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

PipelineConfig PipelineConfig::parse(std::string_view text) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  PipelineConfig c;
  c.workers = default_workers();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' must live in a section");
    for (const auto& [key, value] : body) {
      const auto full = section + "." + key;
      const auto it = setters().find(full);
      if (it == setters().end()) throw ConfigError("config: unknown key '" + full + "'");
      it->second(c, value.data());
    }
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string PipelineConfig::documented_defaults() { return kDefaults; }

void PipelineConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  require(split.train > 0 && split.valid > 0 && split.train + split.valid < 1, "split fractions must be positive with train + valid < 1");
  require(leiden.resolution > 0, "communities.resolution must be > 0");
  require(leiden.randomness > 0, "communities.randomness must be > 0");
  require(leiden.max_iterations >= 1, "communities.max_iterations must be >= 1");
  require(ego.n_hops >= 1, "communities.n_hops must be >= 1");
  require(ego.restart > 0 && ego.restart < 1, "communities.restart must be in (0, 1)");
  require(ego.top_k_per_hop >= 1, "communities.top_k must be >= 1");
  require(ego.max_size >= 1, "communities.max_size must be >= 1");
  require(flow.hops >= 1, "flow.hops must be >= 1");
  require(flow.top_n >= 1, "flow.top_n must be >= 1");
  require(flow.theta_pass >= 0 && flow.theta_pass <= 1, "flow.theta_pass must be in [0, 1]");
  require(flow.theta_ratio >= 0 && flow.theta_ratio <= 1, "flow.theta_ratio must be in [0, 1]");
  require(exact_diameter_cap >= 1, "features.exact_diameter_cap must be >= 1");
  require(max_spill_readers >= 1, "features.max_spill_readers must be >= 1");
  require(anomaly.trees >= 1, "anomaly.trees must be >= 1");
  require(anomaly.sample_size >= 2, "anomaly.sample_size must be >= 2");
  require(model.rounds >= 1, "model.rounds must be >= 1");
  require(model.max_depth >= 1, "model.max_depth must be >= 1");
  require(model.learning_rate > 0, "model.learning_rate must be > 0");
  require(model.early_stopping >= 1, "model.early_stopping must be >= 1");
  require(model.subsample > 0 && model.subsample <= 1, "model.subsample must be in (0, 1]");
  require(model.colsample > 0 && model.colsample <= 1, "model.colsample must be in (0, 1]");
  require(model.lambda >= 0, "model.lambda must be >= 0");
  require(model.min_child_weight >= 0, "model.min_child_weight must be >= 0");
  require(model.max_bins >= 2 && model.max_bins <= 255, "model.max_bins must be in [2, 255]");
  require(!groups.empty(), "model.groups must not be empty");
  require(!seeds.empty(), "run.seeds must not be empty");
  require(workers >= 1, "run.workers must be >= 0");
}

// ---------------------------------------------------------------------------
// Stage bodies shared by the cached pipeline and the in-memory builder

std::string_view stage_name(Stage s) {
  static constexpr std::array<std::string_view, kStageCount> names{
      "ingest", "graphs", "communities", "flow", "temporal_flow", "subgraph_features", "anomaly", "assemble",
      "train_evaluate"};
  return names[static_cast<std::size_t>(s)];
}

StageError::StageError(Stage stage, const std::string& cause)
    : Error("stage " + std::string(stage_name(stage)) + " failed: " + cause), stage_(stage) {}

namespace {

std::vector<NodeId> all_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  std::iota(v.begin(), v.end(), NodeId{0});
  return v;
}

std::size_t spill_readers(const PipelineConfig& c) {
  return std::clamp<std::size_t>(c.memory_budget_bytes >> 28, 1, c.max_spill_readers);
}

CommunityFeatureTable compute_community_features(const MultiGraph& mg, const AggregatedGraph& ag, const Partition& p,
                                                 std::span<const EgoCommunity> egos, const PipelineConfig& c,
                                                 std::size_t workers, const std::filesystem::path& spill_dir) {
  FeatureMapParams fp;
  fp.workers = workers;
  fp.exact_diameter_cap = c.exact_diameter_cap;
  fp.memory_budget_bytes = c.memory_budget_bytes;
  fp.max_spill_readers = spill_readers(c);
  fp.spill_dir = spill_dir;
  const auto types = classify_accounts(ag, c.flow.theta_pass, c.flow.theta_ratio);
  return parallel_feature_map(community_membership_table(p, egos), mg, types, fp);
}

std::pair<NodeFeatures, Eigen::VectorXd> compute_node_features(const AggregatedGraph& ag, const Partition& p,
                                                               std::span<const EgoCommunity> egos,
                                                               const CommunityFeatureTable& cf, const FlowTable& flows,
                                                               const FlowTable& temporal, const PipelineConfig& c,
                                                               std::size_t workers) {
  const auto types = classify_accounts(ag, c.flow.theta_pass, c.flow.theta_ratio);
  NodeFeatureInputs in;
  in.graph = &ag;
  in.partition = &p;
  in.egos = egos;
  in.community_features = &cf;
  in.flows = &flows;
  in.temporal_flows = &temporal;
  in.types = types;
  NodeFeatures nf = assemble_node_features(in);
  Eigen::VectorXd scores;
  if (nf.values.rows() >= 2) {
    const auto forest = IsolationForest::fit(nf.values, c.anomaly, workers);
    scores = forest.score(nf.values, workers);
  } else {
    scores = Eigen::VectorXd::Constant(nf.values.rows(), 0.5);
  }
  return {std::move(nf), std::move(scores)};
}

}  // namespace

FeatureMatrix build_feature_matrix(const Dataset& d, const PipelineConfig& c) {
  const MultiGraph mg = build_multigraph(d);
  const AggregatedGraph ag = aggregate(mg);
  const Partition p = leiden_partition(ag, c.leiden);
  const auto nodes = all_nodes(ag.node_count);
  const auto egos = ego_communities(ag, nodes, c.ego, c.workers);
  const auto flows = compute_flow_table(ag, nodes, c.flow, c.workers);
  const auto temporal = compute_temporal_flow_table(mg, nodes, c.flow, c.workers);
  const auto cf = compute_community_features(mg, ag, p, egos, c, c.workers, c.cache_dir / "spill-audit");
  const auto [nf, scores] = compute_node_features(ag, p, egos, cf, flows, temporal, c, c.workers);
  return assemble_features(d, nf, scores);
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(PipelineConfig config) : cfg_(std::move(config)) { cfg_.validate(); }

std::uint64_t Pipeline::key(Stage s) {
  auto& slot = keys_[static_cast<std::size_t>(s)];
  if (slot) return *slot;
  const auto& c = cfg_;
  std::string text(stage_name(s));
  auto dep = [&](Stage u) { text += "|" + std::to_string(key(u)); };
  switch (s) {
    case Stage::Ingest: {
      if (c.dataset.empty()) throw ConfigError("config: data.path is not set");
      if (!input_hash_) {
        try {
          input_hash_ = io::fnv1a(io::read_file(c.dataset));
        } catch (const DataError& e) {
          throw DataError("stage ingest: " + std::string(e.what()));
        }
      }
      text += "|" + std::to_string(*input_hash_) + "|" + std::string(schema_name(c.schema));
      break;
    }
    case Stage::Graphs:
      dep(Stage::Ingest);
      break;
    case Stage::Communities:
      dep(Stage::Graphs);
      text += "|" + fmt(c.leiden.resolution) + "|" + fmt(c.leiden.randomness) + "|" + std::to_string(c.leiden.seed) +
              "|" + std::to_string(c.leiden.max_iterations) + "|" + std::to_string(c.ego.n_hops) + "|" +
              fmt(c.ego.restart) + "|" + std::to_string(c.ego.top_k_per_hop) + "|" + std::to_string(c.ego.max_size);
      break;
    case Stage::Flow:
      dep(Stage::Graphs);
      text += "|" + std::to_string(c.flow.hops) + "|" + std::to_string(c.flow.top_n);
      break;
    case Stage::TemporalFlow:
      dep(Stage::Graphs);
      text += "|" + std::to_string(c.flow.hops) + "|" + std::to_string(c.flow.top_n) + "|" +
              std::to_string(c.flow.strict_chronology);
      break;
    case Stage::SubgraphFeatures:
      dep(Stage::Communities);
      text += "|" + fmt(c.flow.theta_pass) + "|" + fmt(c.flow.theta_ratio) + "|" + std::to_string(c.exact_diameter_cap);
      break;
    case Stage::Anomaly:
      dep(Stage::SubgraphFeatures);
      dep(Stage::Flow);
      dep(Stage::TemporalFlow);
      text += "|" + std::to_string(c.anomaly.trees) + "|" + std::to_string(c.anomaly.sample_size) + "|" +
              std::to_string(c.anomaly.seed);
      break;
    case Stage::Assemble:
      dep(Stage::Anomaly);
      break;
    case Stage::TrainEvaluate: {
      dep(Stage::Assemble);
      text += "|" + std::to_string(static_cast<int>(c.split.mode)) + "|" + fmt(c.split.train) + "|" + fmt(c.split.valid);
      const auto& m = c.model;
      text += "|" + std::to_string(m.rounds) + "|" + std::to_string(m.max_depth) + "|" + fmt(m.learning_rate) + "|" +
              std::to_string(m.early_stopping) + "|" + fmt(m.subsample) + "|" + fmt(m.colsample) + "|" +
              fmt(m.lambda) + "|" + fmt(m.min_child_weight) + "|" + std::to_string(m.max_bins) + "|" +
              std::to_string(m.balance_classes);
      for (auto g : c.groups) text += "|" + std::string(feature_group_name(g));
      for (auto seed : c.seeds) text += "|" + std::to_string(seed);
      break;
    }
  }
  slot = io::fnv1a(std::string_view(text));
  return *slot;
}

std::filesystem::path Pipeline::cache_path(Stage s) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(key(s)));
  return cfg_.cache_dir / (std::string(stage_name(s)) + "-" + hex + ".bin");
}

std::pair<std::string, std::size_t> Pipeline::cardinality(Stage s) {
  switch (s) {
    case Stage::Ingest:
      return {"edges", dataset_.size()};
    case Stage::Graphs:
    case Stage::TemporalFlow:
      return {"edges", mg_.edge_count()};
    case Stage::Assemble:
    case Stage::TrainEvaluate:
      return {"edges", features_.rows()};
    case Stage::Flow:
      return {"aggregated_edges", ag_.edge_count()};
    default:
      return {"nodes", ag_.node_count};
  }
}

template <typename Compute, typename Save, typename Load>
void Pipeline::run_stage(Stage s, bool& ready, Compute&& compute, Save&& save, Load&& load) {
  if (ready) return;
  using clock = std::chrono::steady_clock;
  const auto path = cache_path(s);
  StageRecord rec;
  rec.stage = stage_name(s);
  rec.workers = cfg_.workers;

  if (cfg_.use_cache && std::filesystem::exists(path)) {
    const auto t0 = clock::now();
    try {
      const auto bytes = io::read_file(path);
      io::Reader r(bytes);
      rec.x_metric = r.string();
      rec.x_value = r.pod<std::uint64_t>();
      const auto payload = r.array<char>();
      load(std::span<const char>(payload));
      rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
      rec.status = "cached";
      records_.push_back(rec);
      ready = true;
      return;
    } catch (const std::exception&) {
      // Unreadable entry (truncated or older format): recompute and overwrite it.
    }
  }

  const auto t0 = clock::now();
  const std::size_t nested_from = records_.size();
  try {
    compute();
  } catch (const ConfigError& e) {
    throw ConfigError("stage " + rec.stage + ": " + e.what());
  } catch (const SchemaError& e) {
    throw SchemaError("stage " + rec.stage + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError("stage " + rec.stage + ": " + e.what());
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(s, e.what());
  }
  // Upstream stages resolved inside compute() report their own time.
  rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  for (std::size_t i = nested_from; i < records_.size(); ++i) rec.seconds -= records_[i].seconds;
  ++bodies_;
  std::tie(rec.x_metric, rec.x_value) = cardinality(s);

  const std::vector<char> payload = save();
  io::Writer w;
  w.string(rec.x_metric);
  w.pod<std::uint64_t>(rec.x_value);
  w.array(payload);
  rec.status = "ran";
  if (!cfg_.use_cache && std::filesystem::exists(path)) {
    bool same = false;
    try {
      const auto old = io::read_file(path);
      io::Reader r(old);
      r.string();
      r.pod<std::uint64_t>();
      same = r.array<char>() == payload;
    } catch (const std::exception&) {
      same = false;
    }
    rec.status = same ? "verified" : "mismatch";
    if (!same) ++mismatches_;
  }
  io::write_file(path, w.bytes());
  records_.push_back(rec);
  ready = true;
}

namespace {
bool& flag(std::array<bool, kStageCount>& a, Stage s) { return a[static_cast<std::size_t>(s)]; }
}  // namespace

const Dataset& Pipeline::dataset() {
  run_stage(
      Stage::Ingest, flag(ready_, Stage::Ingest), [&] { dataset_ = parse_transactions(cfg_.dataset, cfg_.schema); },
      [&] { return serialize_dataset(dataset_); }, [&](std::span<const char> b) { dataset_ = deserialize_dataset(b); });
  return dataset_;
}

const MultiGraph& Pipeline::multigraph() {
  run_stage(
      Stage::Graphs, flag(ready_, Stage::Graphs),
      [&] {
        mg_ = build_multigraph(dataset());
        ag_ = aggregate(mg_);
      },
      [&] { return serialize_graphs(mg_, ag_); },
      [&](std::span<const char> b) { std::tie(mg_, ag_) = deserialize_graphs(b); });
  return mg_;
}

const AggregatedGraph& Pipeline::aggregated() {
  multigraph();
  return ag_;
}

const Partition& Pipeline::partition() {
  run_stage(
      Stage::Communities, flag(ready_, Stage::Communities),
      [&] {
        const auto& ag = aggregated();
        partition_ = leiden_partition(ag, cfg_.leiden);
        egos_ = ego_communities(ag, all_nodes(ag.node_count), cfg_.ego, cfg_.workers);
      },
      [&] { return serialize_communities(partition_, egos_); },
      [&](std::span<const char> b) { std::tie(partition_, egos_) = deserialize_communities(b); });
  return partition_;
}

const std::vector<EgoCommunity>& Pipeline::egos() {
  partition();
  return egos_;
}

const FlowTable& Pipeline::flows() {
  run_stage(
      Stage::Flow, flag(ready_, Stage::Flow),
      [&] {
        const auto& ag = aggregated();
        flows_ = compute_flow_table(ag, all_nodes(ag.node_count), cfg_.flow, cfg_.workers);
      },
      [&] { return serialize_flow_table(flows_); },
      [&](std::span<const char> b) { flows_ = deserialize_flow_table(b); });
  return flows_;
}

const FlowTable& Pipeline::temporal_flows() {
  run_stage(
      Stage::TemporalFlow, flag(ready_, Stage::TemporalFlow),
      [&] {
        const auto& mg = multigraph();
        temporal_ = compute_temporal_flow_table(mg, all_nodes(mg.node_count), cfg_.flow, cfg_.workers);
      },
      [&] { return serialize_flow_table(temporal_); },
      [&](std::span<const char> b) { temporal_ = deserialize_flow_table(b); });
  return temporal_;
}

const CommunityFeatureTable& Pipeline::community_features() {
  run_stage(
      Stage::SubgraphFeatures, flag(ready_, Stage::SubgraphFeatures),
      [&] {
        const auto& p = partition();
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(key(Stage::SubgraphFeatures)));
        community_features_ = compute_community_features(multigraph(), aggregated(), p, egos(), cfg_, cfg_.workers,
                                                         cfg_.cache_dir / (std::string("spill-") + hex));
      },
      [&] { return serialize_community_features(community_features_); },
      [&](std::span<const char> b) { community_features_ = deserialize_community_features(b); });
  return community_features_;
}

const NodeFeatures& Pipeline::node_features() {
  run_stage(
      Stage::Anomaly, flag(ready_, Stage::Anomaly),
      [&] {
        const auto& cf = community_features();
        const auto& fl = flows();
        const auto& tf = temporal_flows();
        std::tie(node_features_, scores_) =
            compute_node_features(aggregated(), partition(), egos(), cf, fl, tf, cfg_, cfg_.workers);
      },
      [&] { return serialize_node_features(node_features_, scores_); },
      [&](std::span<const char> b) { std::tie(node_features_, scores_) = deserialize_node_features(b); });
  return node_features_;
}

const Eigen::VectorXd& Pipeline::anomaly_scores() {
  node_features();
  return scores_;
}

const FeatureMatrix& Pipeline::feature_matrix() {
  run_stage(
      Stage::Assemble, flag(ready_, Stage::Assemble),
      [&] {
        const auto& nf = node_features();
        features_ = assemble_features(dataset(), nf, scores_);
      },
      [&] { return serialize_feature_matrix(features_); },
      [&](std::span<const char> b) { features_ = deserialize_feature_matrix(b); });
  return features_;
}

Split Pipeline::split() { return make_split(dataset(), cfg_.split); }

std::vector<AccountType> Pipeline::account_types() {
  return classify_accounts(aggregated(), cfg_.flow.theta_pass, cfg_.flow.theta_ratio);
}

MembershipTable Pipeline::membership() { return community_membership_table(partition(), egos()); }

const TrainResult& Pipeline::train() {
  run_stage(
      Stage::TrainEvaluate, flag(ready_, Stage::TrainEvaluate),
      [&] {
        const FeatureMatrix fm = feature_matrix().select_groups(cfg_.groups);
        auto out = train_evaluate(fm, split(), cfg_.model, cfg_.seeds, cfg_.workers);
        train_.report = std::move(out.report);
        train_.predictions = std::move(out.predictions);
        train_.model_bytes = out.model.save();
      },
      [&] {
        io::Writer w;
        w.magic("TXGT", 1);
        w.string(train_.report.to_json().dump());
        w.pod<std::uint64_t>(train_.report.train_rows);
        w.pod<std::uint64_t>(train_.report.valid_rows);
        w.pod<std::uint64_t>(train_.report.test_rows);
        w.pod<std::uint64_t>(train_.report.seeds.size());
        for (const auto& s : train_.report.seeds) w.pod(s);
        w.pod<std::uint64_t>(train_.predictions.size());
        for (const auto& p : train_.predictions) {
          w.pod(p.tx_id);
          w.pod(p.score);
          w.pod(p.predicted);
          w.pod(p.label);
        }
        w.array(train_.model_bytes);
        return w.release();
      },
      [&](std::span<const char> b) {
        io::Reader r(b);
        if (r.magic("TXGT") != 1) throw DataError("unsupported training cache version");
        r.string();
        train_.report.train_rows = r.pod<std::uint64_t>();
        train_.report.valid_rows = r.pod<std::uint64_t>();
        train_.report.test_rows = r.pod<std::uint64_t>();
        train_.report.seeds.resize(r.pod<std::uint64_t>());
        for (auto& s : train_.report.seeds) s = r.pod<SeedResult>();
        train_.predictions.resize(r.pod<std::uint64_t>());
        for (auto& p : train_.predictions) {
          p.tx_id = r.pod<TxId>();
          p.score = r.pod<double>();
          p.predicted = r.pod<std::uint8_t>();
          p.label = r.pod<std::uint8_t>();
        }
        train_.model_bytes = r.array<char>();
      });
  return train_;
}

// ---------------------------------------------------------------------------
// Timing

std::vector<StageRecord> bench(Pipeline& p, std::span<const std::size_t> worker_settings) {
  if (worker_settings.empty()) throw ConfigError("bench: no worker settings given");
  const auto& mg = p.multigraph();
  const auto& ag = p.aggregated();
  const auto& part = p.partition();
  const auto& egos = p.egos();
  const auto nodes = all_nodes(ag.node_count);
  const auto& c = p.config();
  std::vector<StageRecord> rows;
  using clock = std::chrono::steady_clock;
  auto time = [&](std::string stage, std::size_t w, std::string metric, std::size_t x, auto&& fn) {
    const auto t0 = clock::now();
    fn();
    rows.push_back({std::move(stage), w, std::chrono::duration<double>(clock::now() - t0).count(), std::move(metric), x,
                    "bench"});
  };
  for (const std::size_t w : worker_settings) {
    if (w < 1) throw ConfigError("bench: worker counts must be >= 1");
    time("flow", w, "aggregated_edges", ag.edge_count(), [&] { compute_flow_table(ag, nodes, c.flow, w); });
    time("temporal_flow", w, "edges", mg.edge_count(), [&] { compute_temporal_flow_table(mg, nodes, c.flow, w); });
    time("subgraph_features", w, "nodes", ag.node_count,
         [&] { compute_community_features(mg, ag, part, egos, c, w, c.cache_dir / "spill-bench"); });
  }
  return rows;
}

void write_timing_csv(std::span<const StageRecord> rows, std::ostream& out) {
  out << "stage,workers,seconds,x_metric,x_value,status\n";
  for (const auto& r : rows)
    out << r.stage << ',' << r.workers << ',' << fmt(r.seconds) << ',' << r.x_metric << ',' << r.x_value << ','
        << r.status << '\n';
}

nlohmann::json timing_json(std::span<const StageRecord> rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"stage", r.stage},
                 {"workers", r.workers},
                 {"seconds", r.seconds},
                 {"x_metric", r.x_metric},
                 {"x_value", r.x_value},
                 {"status", r.status}});
  return j;
}

void emit_plots_data(std::span<const StageRecord> rows, std::ostream& out) {
  if (rows.empty()) throw DataError("emit_plots_data: no timing records");
  out << "stage,x_metric,x_value,workers,seconds\n";
  for (const auto& r : rows)
    out << r.stage << ',' << r.x_metric << ',' << r.x_value << ',' << r.workers << ',' << fmt(r.seconds) << '\n';
}

}  // namespace txg
