#include "adabatch/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "adabatch/error.hpp"
#include "adabatch/pipeline.hpp"

namespace adabatch {

namespace {

using json = nlohmann::json;

[[noreturn]] void bad(const std::string& field, const std::string& why) {
  throw ConfigError(field + " " + why);
}

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "must be an object");
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  require_object(j, where);
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
      bad(where.empty() ? key : where + "." + key, "is not a recognized key");
    }
  }
}

std::string join(const std::string& where, const char* key) {
  return where.empty() ? std::string(key) : where + "." + key;
}

void get_uint(const json& j, const std::string& where, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) bad(join(where, key), "must be a non-negative integer");
  out = v.get<std::size_t>();
}

void get_u64(const json& j, const std::string& where, const char* key, std::uint64_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) bad(join(where, key), "must be a non-negative integer");
  out = v.get<std::uint64_t>();
}

// null or absent means unlimited
void get_limit(const json& j, const std::string& where, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out = kUnlimited;
    return;
  }
  get_uint(j, where, key, out);
}

void get_real(const json& j, const std::string& where, const char* key, double& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number()) bad(join(where, key), "must be a number");
  out = v.get<double>();
}

void get_bool(const json& j, const std::string& where, const char* key, bool& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_boolean()) bad(join(where, key), "must be true or false");
  out = v.get<bool>();
}

void get_string(const json& j, const std::string& where, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_string()) bad(join(where, key), "must be a string");
  out = v.get<std::string>();
}

void get_strings(const json& j, const std::string& where, const char* key,
                 std::vector<std::string>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array()) bad(join(where, key), "must be an array of strings");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_string()) bad(join(where, key), "must be an array of strings");
    out.push_back(e.get<std::string>());
  }
}

// A single integer or a [rows, cols] pair.
void get_pair(const json& j, const std::string& where, const char* key, std::size_t& a,
              std::size_t& b) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (v.is_number_unsigned()) {
    a = b = v.get<std::size_t>();
    return;
  }
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned()) {
    bad(join(where, key), "must be an integer or a pair of integers");
  }
  a = v[0].get<std::size_t>();
  b = v[1].get<std::size_t>();
}

LayerSpec parse_layer(const json& j, const std::string& where) {
  require_object(j, where);
  if (!j.contains("type") || !j.at("type").is_string()) bad(where + ".type", "must be fc, conv or bn");
  const std::string type = j.at("type").get<std::string>();
  LayerSpec s;
  std::string act = "identity";
  if (type == "fc") {
    check_keys(j, where, {"type", "out", "activation"});
    s.kind = LayerKind::fc;
    get_uint(j, where, "out", s.out);
  } else if (type == "conv") {
    check_keys(j, where, {"type", "out_channels", "kernel", "stride", "activation", "tied_bias"});
    s.kind = LayerKind::conv;
    get_uint(j, where, "out_channels", s.out);
    get_pair(j, where, "kernel", s.k1, s.k2);
    get_pair(j, where, "stride", s.s1, s.s2);
    get_bool(j, where, "tied_bias", s.tied_bias);
  } else if (type == "bn") {
    check_keys(j, where, {"type", "eps", "activation"});
    s.kind = LayerKind::bn;
    get_real(j, where, "eps", s.eps);
  } else {
    bad(where + ".type", "must be fc, conv or bn (got '" + type + "')");
  }
  get_string(j, where, "activation", act);
  try {
    s.activation = parse_activation(act);
  } catch (const ConfigError& e) {
    bad(where + ".activation", e.what());
  }
  return s;
}

json layer_json(const LayerSpec& s) {
  json j;
  switch (s.kind) {
    case LayerKind::fc:
      j["type"] = "fc";
      j["out"] = s.out;
      break;
    case LayerKind::conv:
      j["type"] = "conv";
      j["out_channels"] = s.out;
      j["kernel"] = {s.k1, s.k2};
      j["stride"] = {s.s1, s.s2};
      j["tied_bias"] = s.tied_bias;
      break;
    case LayerKind::bn:
      j["type"] = "bn";
      j["eps"] = s.eps;
      break;
  }
  j["activation"] = std::string(activation_name(s.activation));
  return j;
}

json limit_json(std::size_t v) { return v == kUnlimited ? json(nullptr) : json(v); }

}  // namespace

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "", {"config_version", "seed", "precision", "output_dir", "eval_batch",
                        "network", "dataset", "optimizer", "schedule"});
  RunConfig c;
  if (!root.contains("config_version")) bad("config_version", "is required");
  const auto& ver = root.at("config_version");
  if (!ver.is_number_integer() || ver.get<long long>() != kConfigVersion) {
    bad("config_version", "must be " + std::to_string(kConfigVersion));
  }
  get_u64(root, "", "seed", c.seed);
  get_string(root, "", "precision", c.precision);
  get_string(root, "", "output_dir", c.output_dir);
  get_uint(root, "", "eval_batch", c.eval_batch);

  if (!root.contains("network")) bad("network", "is required");
  const json& net = root.at("network");
  check_keys(net, "network", {"input", "layers"});
  if (net.contains("input")) {
    const json& in = net.at("input");
    check_keys(in, "network.input", {"channels", "height", "width"});
    get_uint(in, "network.input", "channels", c.input.channels);
    get_uint(in, "network.input", "height", c.input.height);
    get_uint(in, "network.input", "width", c.input.width);
  }
  if (!net.contains("layers") || !net.at("layers").is_array()) {
    bad("network.layers", "must be an array");
  }
  for (std::size_t i = 0; i < net.at("layers").size(); ++i) {
    c.layers.push_back(parse_layer(net.at("layers")[i], "network.layers[" + std::to_string(i) + "]"));
  }

  if (root.contains("dataset")) {
    const json& d = root.at("dataset");
    check_keys(d, "dataset",
               {"kind", "classes", "per_class", "spread", "radius", "train_files", "test_files",
                "train_images", "train_labels", "test_images", "test_labels", "subset",
                "test_subset", "standardize"});
    auto& ds = c.dataset;
    get_string(d, "dataset", "kind", ds.kind);
    get_uint(d, "dataset", "classes", ds.classes);
    get_uint(d, "dataset", "per_class", ds.per_class);
    get_real(d, "dataset", "spread", ds.spread);
    get_real(d, "dataset", "radius", ds.radius);
    get_strings(d, "dataset", "train_files", ds.train_files);
    get_strings(d, "dataset", "test_files", ds.test_files);
    get_string(d, "dataset", "train_images", ds.train_images);
    get_string(d, "dataset", "train_labels", ds.train_labels);
    get_string(d, "dataset", "test_images", ds.test_images);
    get_string(d, "dataset", "test_labels", ds.test_labels);
    get_uint(d, "dataset", "subset", ds.subset);
    get_uint(d, "dataset", "test_subset", ds.test_subset);
    get_bool(d, "dataset", "standardize", ds.standardize);
  }

  if (root.contains("optimizer")) {
    const json& o = root.at("optimizer");
    check_keys(o, "optimizer", {"momentum", "weight_decay", "bn_decay_exempt"});
    get_real(o, "optimizer", "momentum", c.optimizer.momentum);
    get_real(o, "optimizer", "weight_decay", c.optimizer.weight_decay);
    get_bool(o, "optimizer", "bn_decay_exempt", c.optimizer.bn_decay_exempt);
  }

  if (root.contains("schedule")) {
    const json& s = root.at("schedule");
    const std::string w = "schedule";
    check_keys(s, w, {"base_lr", "base_batch", "interval_epochs", "lr_decay", "batch_multiplier",
                      "warmup_epochs", "warmup_ref_batch", "max_batch", "micro_batch_cap",
                      "total_epochs"});
    auto& sc = c.schedule;
    get_real(s, w, "base_lr", sc.base_lr);
    get_uint(s, w, "base_batch", sc.base_batch);
    get_uint(s, w, "interval_epochs", sc.interval_epochs);
    get_real(s, w, "lr_decay", sc.lr_decay);
    get_uint(s, w, "batch_multiplier", sc.batch_multiplier);
    get_uint(s, w, "warmup_epochs", sc.warmup_epochs);
    get_uint(s, w, "warmup_ref_batch", sc.warmup_ref_batch);
    get_limit(s, w, "max_batch", sc.max_batch);
    get_limit(s, w, "micro_batch_cap", sc.micro_batch_cap);
    get_uint(s, w, "total_epochs", sc.total_epochs);
  }

  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  json root;
  root["config_version"] = c.config_version;
  root["seed"] = c.seed;
  root["precision"] = c.precision;
  root["output_dir"] = c.output_dir;
  root["eval_batch"] = c.eval_batch;
  json layers = json::array();
  for (const auto& l : c.layers) layers.push_back(layer_json(l));
  root["network"] = {{"input",
                      {{"channels", c.input.channels},
                       {"height", c.input.height},
                       {"width", c.input.width}}},
                     {"layers", layers}};

  const auto& ds = c.dataset;
  json d;
  d["kind"] = ds.kind;
  // Every field is written, including those the kind ignores, so that
  // parse(serialize(c)) == c holds for any in-memory config.
  d["classes"] = ds.classes;
  d["per_class"] = ds.per_class;
  d["spread"] = ds.spread;
  d["radius"] = ds.radius;
  d["train_files"] = ds.train_files;
  d["test_files"] = ds.test_files;
  d["train_images"] = ds.train_images;
  d["train_labels"] = ds.train_labels;
  d["test_images"] = ds.test_images;
  d["test_labels"] = ds.test_labels;
  d["subset"] = ds.subset;
  d["test_subset"] = ds.test_subset;
  d["standardize"] = ds.standardize;
  root["dataset"] = d;

  root["optimizer"] = {{"momentum", c.optimizer.momentum},
                       {"weight_decay", c.optimizer.weight_decay},
                       {"bn_decay_exempt", c.optimizer.bn_decay_exempt}};
  const auto& s = c.schedule;
  root["schedule"] = {{"base_lr", s.base_lr},
                      {"base_batch", s.base_batch},
                      {"interval_epochs", s.interval_epochs},
                      {"lr_decay", s.lr_decay},
                      {"batch_multiplier", s.batch_multiplier},
                      {"warmup_epochs", s.warmup_epochs},
                      {"warmup_ref_batch", s.warmup_ref_batch},
                      {"max_batch", limit_json(s.max_batch)},
                      {"micro_batch_cap", limit_json(s.micro_batch_cap)},
                      {"total_epochs", s.total_epochs}};
  return root.dump(2) + "\n";
}

void RunConfig::validate() const {
  if (config_version != kConfigVersion) bad("config_version", "must be 1");
  if (precision != "f64" && precision != "f32") bad("precision", "must be \"f64\" or \"f32\"");
  if (output_dir.empty()) bad("output_dir", "must not be empty");
  if (eval_batch < 1) bad("eval_batch", "must be >= 1");
  if (input.features() == 0) bad("network.input", "extents must be >= 1");
  if (layers.empty()) bad("network.layers", "must not be empty");
  optimizer.validate();
  schedule.validate();

  const auto& ds = dataset;
  if (ds.kind == "synth") {
    if (ds.classes < 2) bad("dataset.classes", "must be >= 2");
    if (ds.per_class < 2) bad("dataset.per_class", "must be >= 2");
    if (!(ds.spread >= 0.0)) bad("dataset.spread", "must be >= 0");
    if (!(ds.radius > 0.0)) bad("dataset.radius", "must be > 0");
  } else if (ds.kind == "cifar10") {
    if (ds.train_files.empty()) bad("dataset.train_files", "must list at least one file");
    if (ds.test_files.empty()) bad("dataset.test_files", "must list at least one file");
    if (!(input == SampleShape{3, 32, 32})) bad("network.input", "must be 3x32x32 for cifar10");
  } else if (ds.kind == "idx") {
    if (ds.train_images.empty() || ds.train_labels.empty() || ds.test_images.empty() ||
        ds.test_labels.empty()) {
      bad("dataset", "idx needs train_images, train_labels, test_images and test_labels");
    }
  } else {
    bad("dataset.kind", "must be synth, cifar10 or idx (got '" + ds.kind + "')");
  }

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "network.layers[" + std::to_string(i) + "]";
    if (l.kind != LayerKind::bn && l.out < 1) bad(where, "output size must be >= 1");
    if (l.kind == LayerKind::conv && (l.k1 < 1 || l.k2 < 1 || l.s1 < 1 || l.s2 < 1)) {
      bad(where, "kernel and stride must be >= 1");
    }
  }
  Rng probe(0);
  Network<double> net;
  try {
    net = Network<double>::build(input, layers, probe);
  } catch (const DimensionError& e) {
    bad("network", e.what());
  }
  if (ds.kind == "synth" && net.num_classes() != ds.classes) {
    bad("network.layers", "final layer has " + std::to_string(net.num_classes()) +
                              " outputs but dataset.classes is " + std::to_string(ds.classes));
  }
  if (ds.kind == "cifar10" && net.num_classes() != 10) {
    bad("network.layers", "final layer must have 10 outputs for cifar10");
  }
}

std::uint64_t data_seed(const RunConfig& c) { return c.seed; }
std::uint64_t init_seed(const RunConfig& c) { return c.seed ^ 0x9e3779b97f4a7c15ULL; }
std::uint64_t shuffle_seed(const RunConfig& c) { return c.seed ^ 0xc2b2ae3d27d4eb4fULL; }

std::pair<Dataset, Dataset> materialize_dataset(const RunConfig& c) {
  const auto& ds = c.dataset;
  Dataset train, test;
  auto require_file = [](const std::string& p) {
    if (!std::filesystem::exists(p)) {
      throw DataError("dataset file not found: " + p);
    }
  };
  if (ds.kind == "synth") {
    auto split = synth_blobs(ds.classes, c.input.features(), ds.per_class, ds.spread,
                             data_seed(c), ds.radius, c.input);
    train = std::move(split.train);
    test = std::move(split.test);
  } else if (ds.kind == "cifar10") {
    std::vector<std::filesystem::path> tr, te;
    for (const auto& f : ds.train_files) {
      require_file(f);
      tr.emplace_back(f);
    }
    for (const auto& f : ds.test_files) {
      require_file(f);
      te.emplace_back(f);
    }
    train = read_cifar10_bin(tr, Split::train);
    test = read_cifar10_bin(te, Split::test);
  } else {
    for (const auto* f : {&ds.train_images, &ds.train_labels, &ds.test_images, &ds.test_labels})
      require_file(*f);
    train = idx_dataset(read_idx(ds.train_images), read_idx(ds.train_labels), Split::train);
    test = idx_dataset(read_idx(ds.test_images), read_idx(ds.test_labels), Split::test);
    const std::size_t classes = std::max(train.num_classes, test.num_classes);
    train.num_classes = test.num_classes = classes;
  }
  if (!(train.shape == c.input)) {
    throw DataError("dataset samples are " + std::to_string(train.shape.channels) + "x" +
                    std::to_string(train.shape.height) + "x" + std::to_string(train.shape.width) +
                    " but network.input differs");
  }
  if (ds.subset > 0) train = subset(train, ds.subset, data_seed(c) + 1).data;
  if (ds.test_subset > 0) test = subset(test, ds.test_subset, data_seed(c) + 2).data;
  train.validate();
  test.validate();
  if (ds.standardize) {
    const auto st = Standardizer::fit(train);
    st.apply(train);
    st.apply(test);
  }
  return {std::move(train), std::move(test)};
}

std::size_t planned_train_size(const RunConfig& c) {
  const auto& ds = c.dataset;
  if (ds.subset > 0) return ds.subset;
  if (ds.kind == "synth") return (ds.classes * ds.per_class * 4) / 5;
  if (ds.kind == "cifar10") {
    std::uintmax_t bytes = 0;
    for (const auto& f : ds.train_files) {
      if (!std::filesystem::exists(f)) throw DataError("dataset file not found: " + f);
      bytes += std::filesystem::file_size(f);
    }
    return static_cast<std::size_t>(bytes / kCifarRecordBytes);
  }
  if (!std::filesystem::exists(ds.train_labels)) {
    throw DataError("dataset file not found: " + ds.train_labels);
  }
  const auto labels = read_idx(ds.train_labels);
  return labels.dims.empty() ? 0 : labels.dims[0];
}

}  // namespace adabatch
