#include "edf/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace edf::config {

namespace {

struct Binding {
  std::string key;  // section.name
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long d = 0;
  try {
    d = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

template <class T>
Binding num(const std::string& key, T& ref) {
  if constexpr (std::is_floating_point_v<T>) {
    return {key, [&ref, key](const std::string& v) { ref = to_double(key, v); }, [&ref] { return fmt(ref); }};
  } else if constexpr (std::is_same_v<T, bool>) {
    return {key, [&ref, key](const std::string& v) { ref = to_bool(key, v); },
            [&ref] { return std::string(ref ? "true" : "false"); }};
  } else {
    return {key,
            [&ref, key](const std::string& v) {
              const auto x = to_int(key, v);
              if (std::is_unsigned_v<T> && x < 0) throw ConfigError(key + ": must be non-negative");
              ref = static_cast<T>(x);
            },
            [&ref] { return std::to_string(ref); }};
  }
}

Binding str(const std::string& key, std::string& ref) {
  return {key, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

// "lo:hi" or a single fraction per class, comma separated.
std::string fractions_text(const std::vector<std::pair<double, double>>& f) {
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i) out += ",";
    out += f[i].first == f[i].second ? fmt(f[i].first) : fmt(f[i].first) + ":" + fmt(f[i].second);
  }
  return out;
}

std::vector<std::pair<double, double>> parse_fractions(const std::string& key, const std::string& v) {
  std::vector<std::pair<double, double>> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      const double f = to_double(key, item);
      out.emplace_back(f, f);
    } else {
      out.emplace_back(to_double(key, trim(item.substr(0, colon))), to_double(key, trim(item.substr(colon + 1))));
    }
  }
  return out;
}

std::vector<Binding> bindings(RunConfig& c) {
  auto& t = c.data.toy;
  auto& d = c.distill;
  auto& m = c.model;
  std::vector<Binding> b{
      num("run.seed", c.seed),
      str("data.source", c.data.source),
      num("data.classes", t.classes),
      num("data.per_class", t.per_class),
      num("data.val_per_class", c.data.val_per_class),
      num("data.channels", t.dims.channels),
      num("data.height", t.dims.height),
      num("data.width", t.dims.width),
      num("data.object_fraction_min", t.object_fraction_min),
      num("data.object_fraction_max", t.object_fraction_max),
      {"data.class_fraction",
       [&t](const std::string& v) { t.class_fraction = parse_fractions("data.class_fraction", v); },
       [&t] { return fractions_text(t.class_fraction); }},
      num("data.clutter", t.clutter),
      num("data.noise", t.noise),
      num("data.seed", t.seed),
      num("data.val_seed", c.data.val_seed),
      str("data.train_images", c.data.train_images),
      str("data.train_labels", c.data.train_labels),
      str("data.val_images", c.data.val_images),
      str("data.val_labels", c.data.val_labels),
      {"model.arch", [&m](const std::string& v) { m.arch = nets::parse_arch(v); },
       [&m] { return nets::arch_name(m.arch); }},
      num("model.depth", m.depth),
      num("model.width", m.width),
      num("model.kernel", m.kernel),
      num("experts.count", c.experts.count),
      num("experts.epochs", c.experts.epochs),
      num("experts.lr_teacher", c.experts.train.lr),
      num("experts.momentum", c.experts.train.momentum),
      num("experts.batch_size", c.experts.train.batch_size),
      num("experts.weight_decay", c.experts.train.weight_decay),
      num("cam.epochs", c.cam_train.epochs),
      num("cam.lr", c.cam_train.lr),
      num("cam.momentum", c.cam_train.momentum),
      num("cam.batch_size", c.cam_train.batch_size),
      {"distill.backbone", [&d](const std::string& v) { d.backbone = distill::parse_backbone(v); },
       [&d] { return distill::backbone_name(d.backbone); }},
      num("distill.T", d.iterations),
      num("distill.alpha", d.alpha),
      num("distill.beta", d.beta),
      num("distill.K", d.refresh),
      num("distill.syn_steps", d.syn_steps),
      num("distill.expert_epochs", d.expert_epochs),
      num("distill.max_start_epoch", d.max_start_epoch),
      num("distill.ipc", d.ipc),
      num("distill.batch_syn", d.batch_syn),
      num("distill.lr_pixel", d.lr_pixel),
      num("distill.lr_label", d.lr_label),
      num("distill.lr_lr", d.lr_lr),
      num("distill.lr_teacher", d.lr_teacher),
      num("distill.momentum", d.momentum),
      num("distill.soft_labels", d.soft_labels),
      {"distill.strategy", [&d](const std::string& v) { d.strategy = cpd::parse_strategy(v); },
       [&d] { return cpd::strategy_name(d.strategy); }},
      {"distill.sort_key",
       [&d](const std::string& v) {
         if (v == "normalized") d.sort_key = cpd::SortKey::Normalized;
         else if (v == "raw") d.sort_key = cpd::SortKey::Raw;
         else throw ConfigError("distill.sort_key: expected normalized or raw");
       },
       [&d] { return std::string(d.sort_key == cpd::SortKey::Raw ? "raw" : "normalized"); }},
      {"distill.drop_scope",
       [&d](const std::string& v) {
         if (v == "kept") d.scope = cpd::Scope::Kept;
         else if (v == "full") d.scope = cpd::Scope::Full;
         else throw ConfigError("distill.drop_scope: expected kept or full");
       },
       [&d] { return std::string(d.scope == cpd::Scope::Full ? "full" : "kept"); }},
      num("distill.checkpoint_every", d.checkpoint_every),
      num("eval.epochs", c.eval.epochs),
      num("eval.repeats", c.eval.repeats),
      num("eval.batch_size", c.eval.batch_size),
      num("eval.lr", c.eval.lr),
      num("eval.momentum", c.eval.momentum),
      num("eval.weight_decay", c.eval.weight_decay),
      num("eval.lr_decay", c.eval.lr_decay),
      num("eval.augment", c.eval.augment),
      num("curate.classes_per_subset", c.curate.classes_per_subset),
      num("curate.threshold", c.curate.threshold),
  };
  return b;
}

}  // namespace

RunConfig::RunConfig() {
  experts.epochs = 10;
  experts.count = 3;
  experts.train.lr = 0.05;
  experts.train.batch_size = 32;
  cam_train.epochs = 10;
  cam_train.lr = 0.05;
  cam_train.batch_size = 32;
  data.toy.per_class = 250;
  data.toy.object_fraction_min = 0.5;
  data.toy.object_fraction_max = 0.9;
  data.toy.clutter = 0.3;
  data.toy.seed = 0;
  resolve();
}

void RunConfig::resolve() {
  model.channels = data.toy.dims.channels;
  model.height = data.toy.dims.height;
  model.image_width = data.toy.dims.width;
  model.classes = data.toy.classes;
  distill.seed = seed;
}

void RunConfig::validate() const {
  if (data.source != "toy" && data.source != "raw") throw ConfigError("data.source must be toy or raw");
  if (data.source == "raw" && (data.train_images.empty() || data.train_labels.empty())) {
    throw ConfigError("data.source=raw needs data.train_images and data.train_labels");
  }
  if (data.val_per_class < 1) throw ConfigError("data.val_per_class must be >= 1");
  model.validate();
  distill.validate();
  if (experts.count < 1 || experts.epochs < 1) throw ConfigError("experts.count and experts.epochs must be >= 1");
  if (distill.max_start_epoch + distill.expert_epochs > experts.epochs) {
    throw ConfigError("distill.max_start_epoch + distill.expert_epochs exceeds experts.epochs");
  }
  if (eval.repeats < 1 || eval.epochs < 1) throw ConfigError("eval.repeats and eval.epochs must be >= 1");
  if (!(curate.threshold > 0.0 && curate.threshold < 1.0)) throw ConfigError("curate.threshold must be in (0,1)");
}

std::string RunConfig::to_text() const {
  auto& self = const_cast<RunConfig&>(*this);
  std::string out;
  std::string section;
  for (const auto& b : bindings(self)) {
    const auto dot = b.key.find('.');
    const std::string s = b.key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += b.key.substr(dot + 1) + " = " + b.get() + "\n";
  }
  return out;
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  for (auto& b : bindings(*this)) {
    if (b.key == dotted_key) {
      b.set(trim(value));
      resolve();
      return;
    }
  }
  throw ConfigError("unknown config key '" + dotted_key + "'");
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a [section]");
    try {
      c.set(section + "." + trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.resolve();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

Datasets generate_toy_datasets(const RunConfig& cfg) {
  Datasets out;
  data::ToyGenSpec g = cfg.data.toy;
  g.seed = cfg.data.toy.seed + cfg.seed;
  out.train = data::generate_toy(g);
  g.per_class = cfg.data.val_per_class;
  g.seed = cfg.data.val_seed + cfg.seed * 7919 + 1;
  g.split = data::Split::Val;
  out.val = data::generate_toy(g);
  return out;
}

}  // namespace edf::config
