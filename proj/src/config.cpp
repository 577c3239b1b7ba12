#include "clbruno/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "clbruno/errors.hpp"

namespace clbruno {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, std::string_view value,
                            const std::string& where) {
  throw ConfigError(where + ": invalid value '" + std::string(value) + "' for key '" + key + "'");
}

template <class T>
T parse_number(const std::string& key, std::string_view value, const std::string& where) {
  T v{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    bad_value(key, value, where);
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) {
      bad_value(key, value, where);
    }
  }
  return v;
}

bool parse_bool(const std::string& key, std::string_view value, const std::string& where) {
  if (value == "true" || value == "1") {
    return true;
  }
  if (value == "false" || value == "0") {
    return false;
  }
  bad_value(key, value, where);
}

using Setter = std::function<void(RunConfig&, std::string_view, const std::string&)>;

template <class T>
Setter number(T RunConfig::*field, const std::string& key) {
  return [field, key](RunConfig& c, std::string_view v, const std::string& where) {
    c.*field = parse_number<T>(key, v, where);
  };
}

template <class T>
Setter synthetic(T SyntheticSpec::*field, const std::string& key) {
  return [field, key](RunConfig& c, std::string_view v, const std::string& where) {
    c.synthetic.*field = parse_number<T>(key, v, where);
  };
}

Setter flag(bool RunConfig::*field, const std::string& key) {
  return [field, key](RunConfig& c, std::string_view v, const std::string& where) {
    c.*field = parse_bool(key, v, where);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"coupling_layers", number(&RunConfig::coupling_layers, "coupling_layers")},
      {"embedding_dim", number(&RunConfig::embedding_dim, "embedding_dim")},
      {"hidden_width", number(&RunConfig::hidden_width, "hidden_width")},
      {"pseudo_size", number(&RunConfig::pseudo_size, "pseudo_size")},
      {"alpha1", number(&RunConfig::alpha1, "alpha1")},
      {"alpha2", number(&RunConfig::alpha2, "alpha2")},
      {"learning_rate", number(&RunConfig::learning_rate, "learning_rate")},
      {"epochs", number(&RunConfig::epochs, "epochs")},
      {"batch_size", number(&RunConfig::batch_size, "batch_size")},
      {"seed", number(&RunConfig::seed, "seed")},
      {"resample_pseudo", flag(&RunConfig::resample_pseudo, "resample_pseudo")},
      {"standardize", flag(&RunConfig::standardize, "standardize")},
      {"synthetic_dim", synthetic(&SyntheticSpec::dim, "synthetic_dim")},
      {"synthetic_tasks", synthetic(&SyntheticSpec::tasks, "synthetic_tasks")},
      {"synthetic_train_size", synthetic(&SyntheticSpec::train_size, "synthetic_train_size")},
      {"synthetic_test_size", synthetic(&SyntheticSpec::test_size, "synthetic_test_size")},
      {"synthetic_noise", synthetic(&SyntheticSpec::noise_variance, "synthetic_noise")},
  };
  return table;
}

}  // namespace

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec s = synthetic;
  s.seed = seed;
  return s;
}

UpdateConfig RunConfig::update() const {
  UpdateConfig u;
  u.alpha1 = alpha1;
  u.alpha2 = alpha2;
  u.pseudo_size = pseudo_size;
  u.epochs = epochs;
  u.batch_size = batch_size;
  u.learning_rate = learning_rate;
  u.resample_pseudo = resample_pseudo;
  return u;
}

FlowConfig RunConfig::flow(std::size_t dim) const {
  return FlowConfig{dim, coupling_layers, embedding_dim, hidden_width};
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) {
      throw ConfigError(std::string("key '") + key + "' must be positive");
    }
  };
  positive(coupling_layers, "coupling_layers");
  positive(embedding_dim, "embedding_dim");
  positive(pseudo_size, "pseudo_size");
  positive(batch_size, "batch_size");
  if (alpha1 < 0.0) {
    throw ConfigError("key 'alpha1' must be non-negative");
  }
  if (alpha2 < 0.0) {
    throw ConfigError("key 'alpha2' must be non-negative");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("key 'learning_rate' must be positive");
  }
  if (synthetic.dim < 2) {
    throw ConfigError("key 'synthetic_dim' must be at least 2");
  }
  positive(synthetic.tasks, "synthetic_tasks");
  if (synthetic.train_size < synthetic.tasks + 1) {
    throw ConfigError("key 'synthetic_train_size' must be at least synthetic_tasks + 1");
  }
  if (!(synthetic.noise_variance > 0.0)) {
    throw ConfigError("key 'synthetic_noise' must be positive");
  }
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    std::string_view text = line;
    if (const auto hash = text.find('#'); hash != std::string_view::npos) {
      text = text.substr(0, hash);
    }
    text = trim(text);
    if (text.empty()) {
      continue;
    }
    const std::string where = source + ":" + std::to_string(row);
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(where + ": expected key=value, got '" + std::string(text) + "'");
    }
    const std::string key(trim(text.substr(0, eq)));
    const std::string_view value = trim(text.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
    it->second(cfg, value, where);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open config '" + path + "'");
  }
  return parse_run_config(in, path);
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "coupling_layers=" << cfg.coupling_layers << '\n'
      << "embedding_dim=" << cfg.embedding_dim << '\n'
      << "hidden_width=" << cfg.hidden_width << '\n'
      << "pseudo_size=" << cfg.pseudo_size << '\n'
      << "alpha1=" << format_shortest(cfg.alpha1) << '\n'
      << "alpha2=" << format_shortest(cfg.alpha2) << '\n'
      << "learning_rate=" << format_shortest(cfg.learning_rate) << '\n'
      << "epochs=" << cfg.epochs << '\n'
      << "batch_size=" << cfg.batch_size << '\n'
      << "seed=" << cfg.seed << '\n'
      << "resample_pseudo=" << (cfg.resample_pseudo ? "true" : "false") << '\n'
      << "standardize=" << (cfg.standardize ? "true" : "false") << '\n'
      << "synthetic_dim=" << cfg.synthetic.dim << '\n'
      << "synthetic_tasks=" << cfg.synthetic.tasks << '\n'
      << "synthetic_train_size=" << cfg.synthetic.train_size << '\n'
      << "synthetic_test_size=" << cfg.synthetic.test_size << '\n'
      << "synthetic_noise=" << format_shortest(cfg.synthetic.noise_variance) << '\n';
  return out.str();
}

}  // namespace clbruno
