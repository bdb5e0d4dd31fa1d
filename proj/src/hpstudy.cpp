#include "pianolab/hpstudy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pianolab/io.hpp"

namespace pianolab::hp {

using nlohmann::json;

std::size_t ParamSpace::dim_index(const std::string& name) const {
  for (std::size_t i = 0; i < dims.size(); ++i)
    if (dims[i].name == name) return i;
  throw ConfigError("unknown dimension: " + name);
}

bool ParamSpace::applicable(std::size_t dim, int cond_value) const {
  if (cond_dim < 0 || applicable_when.empty() || applicable_when[dim].empty()) return true;
  const auto& allowed = applicable_when[dim];
  return std::find(allowed.begin(), allowed.end(), cond_value) != allowed.end();
}

void ParamSpace::validate() const {
  if (dims.empty()) throw ConfigError("parameter space has no dimensions");
  for (const Dimension& d : dims) {
    if (d.values.empty()) throw ConfigError("dimension '" + d.name + "' has no values");
    std::set<std::string> uniq(d.values.begin(), d.values.end());
    if (uniq.size() != d.values.size())
      throw ConfigError("dimension '" + d.name + "' has duplicate values");
    if (d.ordered && d.numeric.size() != d.values.size())
      throw ConfigError("ordered dimension '" + d.name + "' needs numeric positions");
  }
  if (!applicable_when.empty() && applicable_when.size() != dims.size())
    throw ConfigError("applicability table does not match dimension count");
}

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Dimension categorical(std::string name, std::vector<std::string> values) {
  Dimension d;
  d.name = std::move(name);
  d.values = std::move(values);
  return d;
}

Dimension ordered_dim(std::string name, std::vector<std::string> values,
                      std::vector<double> numeric) {
  Dimension d;
  d.name = std::move(name);
  d.ordered = true;
  d.values = std::move(values);
  d.numeric = std::move(numeric);
  return d;
}

void add_representation_dims(ParamSpace& space) {
  space.dims.push_back(categorical("spec_type", {"CQT", "S", "LS", "LM"}));
  space.dims.push_back(ordered_dim("sample_rate", {"22050", "44100"}, {22050, 44100}));
  space.dims.push_back(ordered_dim("zero_pad", {"x0", "x1", "x2"}, {0, 1, 2}));
  space.dims.push_back(categorical("circular_shift", {"off", "on"}));
  space.dims.push_back(ordered_dim("bands_per_octave", {"12", "24", "36", "48"}, {12, 24, 36, 48}));
  space.dims.push_back(categorical("area_normed", {"no", "yes"}));

  // Applicability under the recorded rule: zero padding does not vary for
  // the plain spectrogram S, which reproduces the published grid size of
  // 204 (see README "Representation grid").
  const int cqt = 0, s = 1, ls = 2, lm = 3;
  space.cond_dim = 0;
  space.applicable_when.assign(space.dims.size(), {});
  space.applicable_when[space.dim_index("zero_pad")] = {ls, lm};
  space.applicable_when[space.dim_index("circular_shift")] = {s, ls, lm};
  space.applicable_when[space.dim_index("bands_per_octave")] = {cqt, ls, lm};
  space.applicable_when[space.dim_index("area_normed")] = {ls, lm};
}

}  // namespace

ParamSpace table1_space() {
  ParamSpace space;
  add_representation_dims(space);
  space.validate();
  return space;
}

ParamSpace study_space() {
  ParamSpace space;
  add_representation_dims(space);
  space.dims.push_back(categorical("optimizer", {"SGD", "Momentum", "Nesterov", "Adam"}));
  space.dims.push_back(ordered_dim(
      "learning_rate", {"0.001", "0.01", "0.1", "0.5", "1.0", "2.0", "10.0", "50.0", "100.0"},
      {std::log10(0.001), std::log10(0.01), std::log10(0.1), std::log10(0.5), std::log10(1.0),
       std::log10(2.0), std::log10(10.0), std::log10(50.0), std::log10(100.0)}));
  space.dims.push_back(ordered_dim("momentum", {"off", "0.7", "0.8", "0.9"}, {0.0, 0.7, 0.8, 0.9}));
  space.dims.push_back(categorical("scheduler", {"off", "on"}));
  space.dims.push_back(categorical("batch_norm", {"off", "on"}));
  space.dims.push_back(ordered_dim("dropout", {"off", "0.1", "0.3", "0.5"}, {0.0, 0.1, 0.3, 0.5}));
  space.dims.push_back(ordered_dim("l1", {"off", "1e-07", "1e-08", "1e-09"},
                                   {0.0, 1e-7, 1e-8, 1e-9}));
  space.dims.push_back(ordered_dim("l2", {"off", "1e-07", "1e-08", "1e-09"},
                                   {0.0, 1e-7, 1e-8, 1e-9}));
  space.applicable_when.resize(space.dims.size());
  space.validate();
  return space;
}

std::string space_to_json(const ParamSpace& space) {
  json j;
  j["dims"] = json::array();
  for (const Dimension& d : space.dims) {
    json dj;
    dj["name"] = d.name;
    dj["ordered"] = d.ordered;
    dj["values"] = d.values;
    if (d.ordered) dj["numeric"] = d.numeric;
    j["dims"].push_back(dj);
  }
  j["cond_dim"] = space.cond_dim;
  j["applicable_when"] = space.applicable_when;
  return j.dump(2);
}

ParamSpace space_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid space JSON: ") + e.what());
  }
  // Named presets keep CLI space files small.
  if (j.is_object() && j.contains("preset")) {
    const std::string preset = j["preset"];
    if (preset == "table1") return table1_space();
    if (preset == "study") return study_space();
    throw ConfigError("unknown space preset: " + preset);
  }
  ParamSpace space;
  for (const auto& dj : j.at("dims")) {
    Dimension d;
    d.name = dj.at("name");
    d.ordered = dj.value("ordered", false);
    d.values = dj.at("values").get<std::vector<std::string>>();
    if (dj.contains("numeric")) d.numeric = dj["numeric"].get<std::vector<double>>();
    if (d.ordered && d.numeric.empty())
      for (std::size_t i = 0; i < d.values.size(); ++i) d.numeric.push_back(static_cast<double>(i));
    space.dims.push_back(std::move(d));
  }
  space.cond_dim = j.value("cond_dim", -1);
  if (j.contains("applicable_when"))
    space.applicable_when = j["applicable_when"].get<std::vector<std::vector<int>>>();
  space.validate();
  return space;
}

ParamSpace load_space(const std::filesystem::path& path) {
  return space_from_json(io::read_file(path));
}

std::vector<Configuration> enumerate_grid(const ParamSpace& space) {
  space.validate();
  std::vector<Configuration> grid;
  Configuration cur(space.dims.size(), 0);
  std::set<Configuration> seen;

  // Odometer over the full cartesian product; inapplicable dimensions are
  // canonicalized to index 0 before dedup.
  while (true) {
    Configuration canon = cur;
    const int cond = space.cond_dim >= 0 ? cur[static_cast<std::size_t>(space.cond_dim)] : 0;
    for (std::size_t d = 0; d < space.dims.size(); ++d)
      if (!space.applicable(d, cond)) canon[d] = 0;
    if (seen.insert(canon).second) grid.push_back(canon);

    std::size_t d = space.dims.size();
    while (d-- > 0) {
      if (++cur[d] < static_cast<int>(space.dims[d].values.size())) break;
      cur[d] = 0;
      if (d == 0) return grid;
    }
  }
}

std::vector<Configuration> sample_random(const ParamSpace& space, std::size_t n,
                                         std::uint64_t seed) {
  space.validate();
  if (n < 1) throw ConfigError("sample_random: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Configuration> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Configuration c(space.dims.size());
    for (std::size_t d = 0; d < space.dims.size(); ++d)
      c[d] = static_cast<int>(rng() % space.dims[d].values.size());
    out.push_back(std::move(c));
  }
  return out;
}

dsp::SpecConfig representation_from(const ParamSpace& space, const Configuration& config) {
  dsp::SpecConfig cfg;
  auto value_of = [&](const char* name) -> const std::string& {
    const std::size_t d = space.dim_index(name);
    return space.dims[d].values[static_cast<std::size_t>(config[d])];
  };
  cfg.spec_type = dsp::spec_type_from_string(value_of("spec_type"));
  cfg.sample_rate = std::stod(value_of("sample_rate"));
  const std::string zp = value_of("zero_pad");
  cfg.zero_pad = zp == "x0" ? 0 : (zp == "x1" ? 1 : 2);
  cfg.circular_shift = value_of("circular_shift") == "on";
  cfg.bands_per_octave = std::stoi(value_of("bands_per_octave"));
  cfg.area_normed_filters = value_of("area_normed") == "yes";
  cfg.fmax = std::min(cfg.fmax, cfg.sample_rate / 2.0);
  return cfg;
}

train::TrainConfig trial_train_config(const ParamSpace& space, const Configuration& config,
                                      const train::TrainConfig& base) {
  train::TrainConfig cfg = base;
  auto has = [&](const char* name) {
    for (const Dimension& d : space.dims)
      if (d.name == name) return true;
    return false;
  };
  auto value_of = [&](const char* name) -> const std::string& {
    const std::size_t d = space.dim_index(name);
    return space.dims[d].values[static_cast<std::size_t>(config[d])];
  };
  if (has("spec_type")) cfg.representation = representation_from(space, config);
  if (has("optimizer")) cfg.optimizer.kind = opt::optimizer_kind_from_string(value_of("optimizer"));
  if (has("learning_rate")) cfg.optimizer.learning_rate = std::stod(value_of("learning_rate"));
  if (has("momentum")) {
    const std::string m = value_of("momentum");
    cfg.optimizer.momentum = m == "off" ? 0.0 : std::stod(m);
  }
  if (has("scheduler"))
    cfg.schedule.kind = value_of("scheduler") == "on" ? opt::ScheduleKind::step_multiply
                                                      : opt::ScheduleKind::constant;
  if (has("batch_norm")) cfg.batch_norm = value_of("batch_norm") == "on";
  if (has("dropout")) {
    const std::string v = value_of("dropout");
    cfg.dropout = v == "off" ? 0.0 : std::stod(v);
  }
  if (has("l1")) {
    const std::string v = value_of("l1");
    cfg.l1 = v == "off" ? 0.0 : std::stod(v);
  }
  if (has("l2")) {
    const std::string v = value_of("l2");
    cfg.l2 = v == "off" ? 0.0 : std::stod(v);
  }
  return cfg;
}

std::string config_hash(const ParamSpace& space, const Configuration& config) {
  std::string flat;
  for (std::size_t d = 0; d < space.dims.size(); ++d)
    flat += space.dims[d].name + "=" +
            space.dims[d].values[static_cast<std::size_t>(config[d])] + ";";
  return io::hash_hex(flat);
}

// ---------------------------------------------------------------- forest

namespace {

struct Split {
  int dim = -1;
  std::vector<char> go_left;
  double sse_reduction = 0.0;
};

double sse_of(const std::vector<double>& scores, const std::vector<std::size_t>& idx) {
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i : idx) {
    sum += scores[i];
    sumsq += scores[i] * scores[i];
  }
  const double n = static_cast<double>(idx.size());
  return n > 0 ? sumsq - sum * sum / n : 0.0;
}

// Best split of `idx` along `dim`. Ordered dims scan thresholds over the
// present values in numeric order; categoricals order categories by mean
// response and scan prefixes.
Split best_split_on_dim(const ParamSpace& space, const std::vector<Configuration>& configs,
                        const std::vector<double>& scores, const std::vector<std::size_t>& idx,
                        std::size_t dim, int min_leaf) {
  const Dimension& d = space.dims[dim];
  const std::size_t nv = d.values.size();
  std::vector<double> sum(nv, 0.0);
  std::vector<std::size_t> cnt(nv, 0);
  for (std::size_t i : idx) {
    const auto v = static_cast<std::size_t>(configs[i][dim]);
    sum[v] += scores[i];
    cnt[v] += 1;
  }
  std::vector<std::size_t> present;
  for (std::size_t v = 0; v < nv; ++v)
    if (cnt[v]) present.push_back(v);
  Split best;
  if (present.size() < 2) return best;

  if (d.ordered) {
    std::sort(present.begin(), present.end(),
              [&](std::size_t a, std::size_t b) { return d.numeric[a] < d.numeric[b]; });
  } else {
    std::sort(present.begin(), present.end(), [&](std::size_t a, std::size_t b) {
      return sum[a] / static_cast<double>(cnt[a]) < sum[b] / static_cast<double>(cnt[b]);
    });
  }

  const double parent_sse = sse_of(scores, idx);
  double total_sum = 0.0;
  std::size_t total_cnt = 0;
  for (std::size_t v : present) {
    total_sum += sum[v];
    total_cnt += cnt[v];
  }
  // left/right SSE via sum/sumsq accumulators
  std::vector<double> sumsq(nv, 0.0);
  for (std::size_t i : idx) {
    const auto v = static_cast<std::size_t>(configs[i][dim]);
    sumsq[v] += scores[i] * scores[i];
  }
  double lsum = 0.0, lsumsq = 0.0;
  std::size_t lcnt = 0;
  double total_sumsq = 0.0;
  for (std::size_t v : present) total_sumsq += sumsq[v];

  for (std::size_t cut = 0; cut + 1 < present.size(); ++cut) {
    const std::size_t v = present[cut];
    lsum += sum[v];
    lsumsq += sumsq[v];
    lcnt += cnt[v];
    const std::size_t rcnt = total_cnt - lcnt;
    if (lcnt < static_cast<std::size_t>(min_leaf) || rcnt < static_cast<std::size_t>(min_leaf))
      continue;
    const double rsum = total_sum - lsum;
    const double rsumsq = total_sumsq - lsumsq;
    const double child_sse = (lsumsq - lsum * lsum / static_cast<double>(lcnt)) +
                             (rsumsq - rsum * rsum / static_cast<double>(rcnt));
    const double reduction = parent_sse - child_sse;
    if (reduction > best.sse_reduction) {
      best.dim = static_cast<int>(dim);
      best.sse_reduction = reduction;
      best.go_left.assign(nv, 0);
      if (d.ordered) {
        // everything numerically <= the cut value goes left
        const double thr = d.numeric[present[cut]];
        for (std::size_t w = 0; w < nv; ++w) best.go_left[w] = d.numeric[w] <= thr ? 1 : 0;
      } else {
        for (std::size_t c2 = 0; c2 <= cut; ++c2) best.go_left[present[c2]] = 1;
      }
    }
  }
  return best;
}

int grow_tree(Tree& tree, const ParamSpace& space, const std::vector<Configuration>& configs,
              const std::vector<double>& scores, std::vector<std::size_t> idx, int min_leaf,
              std::mt19937_64& rng) {
  TreeNode node;
  double sum = 0.0;
  for (std::size_t i : idx) sum += scores[i];
  node.count = idx.size();
  node.mean = idx.empty() ? 0.0 : sum / static_cast<double>(idx.size());

  const int node_id = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back(node);
  if (idx.size() < 2 * static_cast<std::size_t>(min_leaf)) return node_id;

  // sqrt(d) feature subsampling
  const std::size_t ndims = space.dims.size();
  const std::size_t n_try =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(ndims))));
  std::vector<std::size_t> order(ndims);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < n_try; ++i)
    std::swap(order[i], order[i + rng() % (ndims - i)]);

  Split best;
  for (std::size_t i = 0; i < n_try; ++i) {
    const Split s = best_split_on_dim(space, configs, scores, idx, order[i], min_leaf);
    if (s.dim >= 0 && s.sse_reduction > best.sse_reduction) best = s;
  }
  if (best.dim < 0 || best.sse_reduction <= 1e-15) return node_id;

  std::vector<std::size_t> left, right;
  for (std::size_t i : idx)
    (best.go_left[static_cast<std::size_t>(configs[i][static_cast<std::size_t>(best.dim)])]
         ? left
         : right)
        .push_back(i);
  idx.clear();
  idx.shrink_to_fit();

  const int l = grow_tree(tree, space, configs, scores, std::move(left), min_leaf, rng);
  const int r = grow_tree(tree, space, configs, scores, std::move(right), min_leaf, rng);
  tree.nodes[static_cast<std::size_t>(node_id)].dim = best.dim;
  tree.nodes[static_cast<std::size_t>(node_id)].go_left = std::move(best.go_left);
  tree.nodes[static_cast<std::size_t>(node_id)].left = l;
  tree.nodes[static_cast<std::size_t>(node_id)].right = r;
  return node_id;
}

}  // namespace

Forest fit_forest(const ParamSpace& space, const std::vector<TrialResult>& trials,
                  const ForestOptions& opts, std::uint64_t seed) {
  space.validate();
  std::vector<Configuration> configs;
  std::vector<double> scores;
  for (const TrialResult& t : trials) {
    if (t.config.size() != space.dims.size())
      throw ConfigError("trial configuration does not match the space");
    if (t.status == TrialStatus::diverged) {
      if (!opts.impute_diverged) continue;
      configs.push_back(t.config);
      scores.push_back(opts.impute_score);
    } else {
      configs.push_back(t.config);
      scores.push_back(t.score);
    }
  }
  std::set<Configuration> distinct(configs.begin(), configs.end());
  if (distinct.size() < 2)
    throw ConfigError("fit_forest: need at least 2 distinct configurations");

  Forest forest;
  forest.space = space;
  std::mt19937_64 master(seed);
  for (int t = 0; t < opts.n_trees; ++t) {
    std::mt19937_64 rng(master());
    std::vector<std::size_t> boot(configs.size());
    for (std::size_t i = 0; i < boot.size(); ++i) boot[i] = rng() % configs.size();
    Tree tree;
    grow_tree(tree, space, configs, scores, std::move(boot), opts.min_leaf, rng);
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

double predict(const Forest& forest, const Configuration& config) {
  double sum = 0.0;
  for (const Tree& tree : forest.trees) {
    int node = 0;
    while (forest.space.dims.size() && tree.nodes[static_cast<std::size_t>(node)].dim >= 0) {
      const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
      const auto v = static_cast<std::size_t>(config[static_cast<std::size_t>(n.dim)]);
      node = n.go_left[v] ? n.left : n.right;
    }
    sum += tree.nodes[static_cast<std::size_t>(node)].mean;
  }
  return forest.trees.empty() ? 0.0 : sum / static_cast<double>(forest.trees.size());
}

namespace {

// Leaves of one tree with, per dimension, the set of declared values that
// reach the leaf. The weight of a leaf under the uniform product measure
// is prod_i |allowed_i| / |declared_i|.
struct LeafRegion {
  std::vector<std::vector<char>> allowed;  // per dim, per value
  double mean = 0.0;
};

void collect_leaves(const Tree& tree, const ParamSpace& space, int node,
                    std::vector<std::vector<char>>& allowed, std::vector<LeafRegion>& out) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.dim < 0) {
    out.push_back({allowed, n.mean});
    return;
  }
  const auto dim = static_cast<std::size_t>(n.dim);
  std::vector<char> saved = allowed[dim];
  std::vector<char> left(saved.size(), 0), right(saved.size(), 0);
  for (std::size_t v = 0; v < saved.size(); ++v) {
    if (!saved[v]) continue;
    (n.go_left[v] ? left : right)[v] = 1;
  }
  auto nonempty = [](const std::vector<char>& m) {
    return std::any_of(m.begin(), m.end(), [](char c) { return c != 0; });
  };
  if (nonempty(left)) {
    allowed[dim] = left;
    collect_leaves(tree, space, n.left, allowed, out);
  }
  if (nonempty(right)) {
    allowed[dim] = right;
    collect_leaves(tree, space, n.right, allowed, out);
  }
  allowed[dim] = std::move(saved);
}

std::vector<LeafRegion> tree_leaves(const Tree& tree, const ParamSpace& space) {
  std::vector<std::vector<char>> allowed;
  for (const Dimension& d : space.dims) allowed.emplace_back(d.values.size(), 1);
  std::vector<LeafRegion> out;
  collect_leaves(tree, space, 0, allowed, out);
  return out;
}

double region_weight(const ParamSpace& space, const LeafRegion& leaf,
                     const std::vector<std::size_t>& skip_dims) {
  double w = 1.0;
  for (std::size_t d = 0; d < space.dims.size(); ++d) {
    if (std::find(skip_dims.begin(), skip_dims.end(), d) != skip_dims.end()) continue;
    std::size_t cnt = 0;
    for (char c : leaf.allowed[d]) cnt += c != 0;
    w *= static_cast<double>(cnt) / static_cast<double>(space.dims[d].values.size());
  }
  return w;
}

double variance_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(xs.size());
}

double tree_total_variance(const ParamSpace& space, const std::vector<LeafRegion>& leaves) {
  double e = 0.0, e2 = 0.0;
  for (const LeafRegion& leaf : leaves) {
    const double w = region_weight(space, leaf, {});
    e += w * leaf.mean;
    e2 += w * leaf.mean * leaf.mean;
  }
  return std::max(0.0, e2 - e * e);
}

std::vector<double> tree_marginal(const ParamSpace& space, const std::vector<LeafRegion>& leaves,
                                  std::size_t dim) {
  std::vector<double> m(space.dims[dim].values.size(), 0.0);
  for (const LeafRegion& leaf : leaves) {
    const double w = region_weight(space, leaf, {dim});
    for (std::size_t v = 0; v < m.size(); ++v)
      if (leaf.allowed[dim][v]) m[v] += w * leaf.mean;
  }
  return m;
}

std::vector<double> tree_pair_marginal(const ParamSpace& space,
                                       const std::vector<LeafRegion>& leaves, std::size_t di,
                                       std::size_t dj) {
  const std::size_t ni = space.dims[di].values.size();
  const std::size_t nj = space.dims[dj].values.size();
  std::vector<double> m(ni * nj, 0.0);
  for (const LeafRegion& leaf : leaves) {
    const double w = region_weight(space, leaf, {di, dj});
    for (std::size_t a = 0; a < ni; ++a) {
      if (!leaf.allowed[di][a]) continue;
      for (std::size_t b = 0; b < nj; ++b)
        if (leaf.allowed[dj][b]) m[a * nj + b] += w * leaf.mean;
    }
  }
  return m;
}

}  // namespace

MarginalCurve marginal(const Forest& forest, const std::string& dimension) {
  const std::size_t dim = forest.space.dim_index(dimension);
  const std::size_t nv = forest.space.dims[dim].values.size();

  MarginalCurve curve;
  curve.dimension = dimension;
  curve.values = forest.space.dims[dim].values;
  curve.mean.assign(nv, 0.0);
  curve.spread.assign(nv, 0.0);

  std::vector<std::vector<double>> per_tree;  // tree x value
  double share_sum = 0.0;
  std::size_t share_trees = 0;
  for (const Tree& tree : forest.trees) {
    const auto leaves = tree_leaves(tree, forest.space);
    const std::vector<double> m = tree_marginal(forest.space, leaves, dim);
    per_tree.push_back(m);
    const double vt = tree_total_variance(forest.space, leaves);
    ++share_trees;
    if (vt > 0) share_sum += variance_of(m) / vt;
  }
  const double nt = static_cast<double>(per_tree.size());
  for (std::size_t v = 0; v < nv; ++v) {
    double s = 0.0;
    for (const auto& m : per_tree) s += m[v];
    curve.mean[v] = s / nt;
    double acc = 0.0;
    for (const auto& m : per_tree) acc += (m[v] - curve.mean[v]) * (m[v] - curve.mean[v]);
    curve.spread[v] = std::sqrt(acc / nt);
  }
  curve.share_total_pct = share_trees ? 100.0 * share_sum / static_cast<double>(share_trees) : 0.0;
  return curve;
}

double interaction(const Forest& forest, const std::string& dim_i, const std::string& dim_j) {
  if (dim_i == dim_j) throw ConfigError("interaction: dimensions must differ");
  const std::size_t di = forest.space.dim_index(dim_i);
  const std::size_t dj = forest.space.dim_index(dim_j);

  double share_sum = 0.0;
  std::size_t trees = 0;
  for (const Tree& tree : forest.trees) {
    const auto leaves = tree_leaves(tree, forest.space);
    const double vt = tree_total_variance(forest.space, leaves);
    ++trees;
    if (vt <= 0) continue;
    const auto mi = tree_marginal(forest.space, leaves, di);
    const auto mj = tree_marginal(forest.space, leaves, dj);
    const auto mij = tree_pair_marginal(forest.space, leaves, di, dj);
    const double pure =
        variance_of(mij) - variance_of(mi) - variance_of(mj);
    share_sum += std::max(0.0, pure) / vt;
  }
  return trees ? 100.0 * share_sum / static_cast<double>(trees) : 0.0;
}

ImportanceReport analyze(const Forest& forest, bool pairwise) {
  ImportanceReport rep;
  std::ostringstream head;
  head << "trees=" << forest.trees.size() << " min_leaf=2 feature_subsample=ceil(sqrt(d))"
       << " dims=" << forest.space.dims.size();
  rep.header = head.str();

  double main_sum = 0.0;
  for (const Dimension& d : forest.space.dims) {
    MarginalCurve c = marginal(forest, d.name);
    main_sum += c.share_total_pct;
    rep.curves.push_back(std::move(c));
  }
  for (MarginalCurve& c : rep.curves) {
    c.share_main_pct = main_sum > 0 ? 100.0 * c.share_total_pct / main_sum : 0.0;
    rep.main_effects.push_back({c.dimension, c.share_total_pct, c.share_main_pct});
  }
  std::sort(rep.main_effects.begin(), rep.main_effects.end(), [](const auto& a, const auto& b) {
    if (a.share_total_pct != b.share_total_pct) return a.share_total_pct > b.share_total_pct;
    return a.name < b.name;
  });

  if (pairwise) {
    for (std::size_t i = 0; i < forest.space.dims.size(); ++i)
      for (std::size_t j = i + 1; j < forest.space.dims.size(); ++j) {
        const double share =
            interaction(forest, forest.space.dims[i].name, forest.space.dims[j].name);
        rep.interactions.push_back(
            {forest.space.dims[i].name, forest.space.dims[j].name, share});
      }
    std::sort(rep.interactions.begin(), rep.interactions.end(), [](const auto& a, const auto& b) {
      if (a.share_total_pct != b.share_total_pct) return a.share_total_pct > b.share_total_pct;
      return std::tie(a.name_i, a.name_j) < std::tie(b.name_i, b.name_j);
    });
  }
  return rep;
}

void save_report(const std::filesystem::path& dir, const ImportanceReport& report) {
  std::filesystem::create_directories(dir);

  std::ostringstream txt;
  txt.precision(4);
  txt << std::fixed;
  txt << "# hyperparameter importance (" << report.header << ")\n\n";
  txt << "main effects (share of total variance / share of main effects):\n";
  for (const auto& m : report.main_effects)
    txt << "  " << m.name << ": " << m.share_total_pct << "% / " << m.share_main_pct << "%\n";
  if (!report.interactions.empty()) {
    txt << "\npairwise interactions (share of total variance):\n";
    for (const auto& it : report.interactions)
      if (it.share_total_pct > 0.005)
        txt << "  " << it.name_i << " x " << it.name_j << ": " << it.share_total_pct << "%\n";
  }
  io::atomic_write_file(dir / "importance.txt", txt.str());

  std::ostringstream imp;
  imp.precision(10);
  imp << "dimension,share_total_pct,share_main_pct\n";
  for (const auto& m : report.main_effects)
    imp << m.name << ',' << m.share_total_pct << ',' << m.share_main_pct << "\n";
  io::atomic_write_file(dir / "importance.csv", imp.str());

  std::ostringstream inter;
  inter.precision(10);
  inter << "dim_i,dim_j,share_total_pct\n";
  for (const auto& it : report.interactions)
    inter << it.name_i << ',' << it.name_j << ',' << it.share_total_pct << "\n";
  io::atomic_write_file(dir / "interactions.csv", inter.str());

  std::ostringstream curves;
  curves.precision(10);
  curves << "dimension,value,mean,spread\n";
  for (const auto& c : report.curves)
    for (std::size_t v = 0; v < c.values.size(); ++v)
      curves << c.dimension << ',' << c.values[v] << ',' << c.mean[v] << ',' << c.spread[v]
             << "\n";
  io::atomic_write_file(dir / "marginals.csv", curves.str());
}

// ----------------------------------------------------------------- ledger

void write_ledger_header(const std::filesystem::path& ledger, const ParamSpace& space) {
  std::ostringstream head;
  head << "config_hash";
  for (const Dimension& d : space.dims) head << ',' << d.name;
  head << ",score,status\n";
  io::atomic_write_file(ledger, head.str());
}

void append_trial(const std::filesystem::path& ledger, const ParamSpace& space,
                  const TrialResult& trial) {
  if (!std::filesystem::exists(ledger)) write_ledger_header(ledger, space);
  std::ostringstream row;
  row.precision(10);
  row << config_hash(space, trial.config);
  for (std::size_t d = 0; d < space.dims.size(); ++d)
    row << ',' << space.dims[d].values[static_cast<std::size_t>(trial.config[d])];
  row << ',' << trial.score << ','
      << (trial.status == TrialStatus::ok ? "ok" : "diverged") << "\n";
  std::ofstream out(ledger, std::ios::app);
  if (!out) throw IoError("cannot append to ledger: " + ledger.string());
  out << row.str();
  out.flush();
  if (!out) throw IoError("short append to ledger: " + ledger.string());
}

LedgerReadResult read_ledger(const std::filesystem::path& ledger, const ParamSpace& space) {
  std::ifstream in(ledger);
  if (!in) throw IoError("cannot open ledger: " + ledger.string());
  LedgerReadResult result;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      if (line.rfind("config_hash", 0) == 0) continue;  // header
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != space.dims.size() + 3) {
      ++result.skipped;
      continue;
    }
    TrialResult t;
    bool ok = true;
    for (std::size_t d = 0; d < space.dims.size(); ++d) {
      const auto& values = space.dims[d].values;
      const auto it = std::find(values.begin(), values.end(), cells[d + 1]);
      if (it == values.end()) {
        ok = false;
        break;
      }
      t.config.push_back(static_cast<int>(it - values.begin()));
    }
    if (!ok) {
      ++result.skipped;
      continue;
    }
    try {
      t.score = std::stod(cells[space.dims.size() + 1]);
    } catch (...) {
      ++result.skipped;
      continue;
    }
    const std::string& status = cells[space.dims.size() + 2];
    if (status == "ok")
      t.status = TrialStatus::ok;
    else if (status == "diverged")
      t.status = TrialStatus::diverged;
    else {
      ++result.skipped;
      continue;
    }
    result.trials.push_back(std::move(t));
  }
  return result;
}

}  // namespace pianolab::hp
