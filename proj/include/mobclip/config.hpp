#pragma once

// Pipeline configuration: one JSON document, one object per module. Every
// key is optional and falls back to the module default; unknown keys are
// rejected.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "mobclip/align.hpp"
#include "mobclip/distill.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/hexgrid.hpp"
#include "mobclip/line.hpp"
#include "mobclip/probe.hpp"
#include "mobclip/synth.hpp"

namespace mobclip::config {

using nlohmann::json;

enum class SampleMode { topk, random };

struct GraphSection {
  SampleMode sample_mode = SampleMode::topk;
  double ratio = 0.10;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct PipelineConfig {
  hexgrid::GridConfig grid = hexgrid::GridConfig::level6_analog({31.0, 121.0}, 31.0);
  synth::SynthConfig synth;
  GraphSection graph;
  line::LineConfig line;
  align::AlignConfig align = align::AlignConfig::desk();
  probe::ProbeConfig probe;
  distill::DistillConfig distill;

  void validate() const {
    grid.validate();
    synth.validate();
    if (!(graph.ratio > 0.0 && graph.ratio <= 1.0)) throw ConfigError("graph.ratio must lie in (0, 1]");
    if (graph.threads == 0) throw ConfigError("graph.threads must be >= 1");
    line.validate();
    align.validate();
    probe.validate();
    distill.validate();
  }

  /// Overrides every module seed.
  void set_seed(std::uint64_t s) {
    synth.seed = graph.seed = line.seed = align.seed = probe.seed = distill.seed = s;
  }

  /// Forces every single-thread code path.
  void set_deterministic() {
    graph.threads = 1;
    line.threads = 1;
  }
};

namespace detail {

/// Reads or writes the fields of one section through a list of named bindings.
class Section {
public:
  using Reader = std::function<void(const json&)>;
  using Writer = std::function<json()>;

  template <typename T>
  Section& field(const std::string& key, T& ref) {
    readers_[key] = [&ref, qualified = name_ + "." + key](const json& v) {
      bool ok = true;
      if constexpr (std::is_same_v<T, bool>)
        ok = v.is_boolean();
      else if constexpr (std::is_unsigned_v<T>)
        ok = v.is_number_unsigned();
      else if constexpr (std::is_integral_v<T>)
        ok = v.is_number_integer();
      else if constexpr (std::is_floating_point_v<T>)
        ok = v.is_number();
      if (!ok) throw ConfigError("config key '" + qualified + "' has the wrong type");
      try {
        ref = v.get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config key '" + qualified + "' has the wrong type");
      }
    };
    writers_[key] = [&ref] { return json(ref); };
    return *this;
  }

  Section& custom(const std::string& key, Reader r, Writer w) {
    readers_[key] = std::move(r);
    writers_[key] = std::move(w);
    return *this;
  }

  explicit Section(std::string name) : name_(std::move(name)) {}

  void read(const json& obj) const {
    if (!obj.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      auto r = readers_.find(it.key());
      if (r == readers_.end()) throw ConfigError("unknown config key '" + name_ + "." + it.key() + "'");
      r->second(it.value());
    }
  }

  json write() const {
    json out = json::object();
    for (const auto& [k, w] : writers_) out[k] = w();
    return out;
  }

private:
  std::string name_;
  std::map<std::string, Reader> readers_;
  std::map<std::string, Writer> writers_;
};

inline Section geo_fields(const std::string& name, hexgrid::GeoCoord& c) {
  Section s(name);
  s.field("lat", c.lat).field("lon", c.lon);
  return s;
}

inline Section grid_section(hexgrid::GridConfig& g, const std::string& name) {
  Section s(name);
  s.field("resolution", g.resolution).field("edge_length0_m", g.edge_length0_m).field("ref_lat", g.ref_lat);
  s.custom(
      "origin", [&g, name](const json& v) { geo_fields(name + ".origin", g.origin).read(v); },
      [&g, name] { return geo_fields(name + ".origin", g.origin).write(); });
  return s;
}

template <typename Enum>
Section& enum_field(Section& s, const std::string& key, Enum& ref, std::function<Enum(const std::string&)> parse,
                    std::function<std::string(Enum)> show, const std::string& qualified) {
  return s.custom(
      key,
      [&ref, parse, qualified](const json& v) {
        if (!v.is_string()) throw ConfigError("config key '" + qualified + "' must be a string");
        try {
          ref = parse(v.get<std::string>());
        } catch (const Error& e) {
          throw ConfigError("config key '" + qualified + "': " + e.what());
        }
      },
      [&ref, show] { return json(show(ref)); });
}

inline std::map<std::string, Section> sections(PipelineConfig& c) {
  std::map<std::string, Section> out;
  out.emplace("grid", grid_section(c.grid, "grid"));

  Section synth("synth");
  synth.field("rows", c.synth.rows)
      .field("cols", c.synth.cols)
      .field("latent_dim", c.synth.latent_dim)
      .field("mobility_latent_dims", c.synth.mobility_latent_dims)
      .field("n_entities", c.synth.n_entities)
      .field("n_buckets", c.synth.n_buckets)
      .field("min_visits", c.synth.min_visits)
      .field("max_visits", c.synth.max_visits)
      .field("visit_sharpness", c.synth.visit_sharpness)
      .field("text_dim", c.synth.text_dim)
      .field("image_dim", c.synth.image_dim)
      .field("demo_dim", c.synth.demo_dim)
      .field("text_noise", c.synth.text_noise)
      .field("image_noise", c.synth.image_noise)
      .field("demo_noise", c.synth.demo_noise)
      .field("demo_count_scale", c.synth.demo_count_scale)
      .field("target_noise", c.synth.target_noise)
      .field("admin_block", c.synth.admin_block)
      .field("seed", c.synth.seed);
  out.emplace("synth", std::move(synth));

  Section graph("graph");
  graph.field("ratio", c.graph.ratio).field("seed", c.graph.seed).field("threads", c.graph.threads);
  enum_field<SampleMode>(
      graph, "sample_mode", c.graph.sample_mode,
      [](const std::string& s) {
        if (s == "topk") return SampleMode::topk;
        if (s == "random") return SampleMode::random;
        throw ValidationError("expected 'topk' or 'random', got '" + s + "'");
      },
      [](SampleMode m) { return std::string(m == SampleMode::topk ? "topk" : "random"); }, "graph.sample_mode");
  out.emplace("graph", std::move(graph));

  Section line("line");
  line.field("dim", c.line.dim)
      .field("negatives_per_edge", c.line.negatives_per_edge)
      .field("total_samples", c.line.total_samples)
      .field("lr_init", c.line.lr_init)
      .field("noise_power", c.line.noise_power)
      .field("seed", c.line.seed)
      .field("threads", c.line.threads);
  out.emplace("line", std::move(line));

  Section align("align");
  align.field("dim", c.align.dim)
      .field("temperature", c.align.temperature)
      .field("batch_size", c.align.batch_size)
      .field("epochs", c.align.epochs)
      .field("lr", c.align.lr)
      .field("weight_decay", c.align.weight_decay)
      .field("val_fraction", c.align.val_fraction)
      .field("demo_hidden", c.align.demo_hidden)
      .field("layers", c.align.layers)
      .field("seed", c.align.seed);
  enum_field<mobenc::NormMode>(
      align, "norm_mode", c.align.norm_mode, [](const std::string& s) { return mobenc::parse_norm_mode(s); },
      [](mobenc::NormMode m) { return std::string(m == mobenc::NormMode::symmetric ? "symmetric" : "row"); },
      "align.norm_mode");
  out.emplace("align", std::move(align));

  Section probe("probe");
  probe.field("lambda", c.probe.lambda)
      .field("test_fraction", c.probe.test_fraction)
      .field("trials", c.probe.trials)
      .field("seed", c.probe.seed);
  out.emplace("probe", std::move(probe));

  Section distill("distill");
  distill.field("features", c.distill.features)
      .field("hidden_layers", c.distill.hidden_layers)
      .field("hidden_dim", c.distill.hidden_dim)
      .field("out_dim", c.distill.out_dim)
      .field("omega0", c.distill.omega0)
      .field("lr", c.distill.lr)
      .field("epochs", c.distill.epochs)
      .field("batch_size", c.distill.batch_size)
      .field("stop_loss", c.distill.stop_loss)
      .field("standardize_targets", c.distill.standardize_targets)
      .field("seed", c.distill.seed);
  out.emplace("distill", std::move(distill));
  return out;
}

}  // namespace detail

/// Applies a JSON document on top of the defaults. The synth grid follows
/// the top-level grid section.
inline PipelineConfig from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
  PipelineConfig c;
  auto secs = detail::sections(c);
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto s = secs.find(it.key());
    if (s == secs.end()) throw ConfigError("unknown config section '" + it.key() + "'");
    s->second.read(it.value());
  }
  c.synth.grid = c.grid;
  c.validate();
  return c;
}

inline json to_json(const PipelineConfig& cfg) {
  PipelineConfig c = cfg;
  json out = json::object();
  for (const auto& [name, s] : detail::sections(c)) out[name] = s.write();
  return out;
}

inline PipelineConfig parse(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), -1, static_cast<std::int64_t>(e.byte));
  }
  return from_json(doc);
}

inline PipelineConfig load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

}  // namespace mobclip::config
