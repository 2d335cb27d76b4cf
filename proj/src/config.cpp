#include "argprog/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

namespace argprog {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Parse failures surface as plain messages; the caller adds the line number.
struct ValueError {
  std::string message;
};

template <class T>
T parse_number(std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ValueError{"expected " + std::string(std::is_integral_v<T> ? "an integer" : "a number") + ", got '" +
                     std::string(text) + "'"};
  }
  return value;
}

bool parse_bool(std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ValueError{"expected true or false, got '" + std::string(text) + "'"};
}

std::string print_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Ref>
Field int_field(std::string name, Ref ref, long long lo, long long hi) {
  return {name,
          [=](RunConfig& c, std::string_view v) {
            const auto x = parse_number<long long>(v);
            if (x < lo || x > hi) {
              throw ValueError{"value " + std::string(v) + " out of range [" + std::to_string(lo) + ", " +
                               std::to_string(hi) + "]"};
            }
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(x);
          },
          [=](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

template <class Ref>
Field double_field(std::string name, Ref ref, double lo, double hi, bool open_lo = false) {
  return {name,
          [=](RunConfig& c, std::string_view v) {
            const auto x = parse_number<double>(v);
            if (!(x >= lo && x <= hi) || (open_lo && x == lo)) {
              throw ValueError{"value " + std::string(v) + " out of range " + (open_lo ? "(" : "[") +
                               print_double(lo) + ", " + print_double(hi) + "]"};
            }
            ref(c) = x;
          },
          [=](const RunConfig& c) { return print_double(ref(const_cast<RunConfig&>(c))); }};
}

template <class Ref>
Field bool_field(std::string name, Ref ref) {
  return {name, [=](RunConfig& c, std::string_view v) { ref(c) = parse_bool(v); },
          [=](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Ref>
Field string_field(std::string name, Ref ref) {
  return {name,
          [=](RunConfig& c, std::string_view v) {
            if (v.empty()) throw ValueError{"expected a non-empty value"};
            ref(c) = std::string(v);
          },
          [=](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    constexpr long long kBig = std::numeric_limits<int>::max();
    std::vector<Field> f;
    f.push_back({"seed",
                 [](RunConfig& c, std::string_view v) { c.train.seed = parse_number<std::uint64_t>(v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    f.push_back({"library",
                 [](RunConfig& c, std::string_view v) {
                   auto m = parse_library_mode(v);
                   if (!m) throw ValueError{"expected args or noargs, got '" + std::string(v) + "'"};
                   c.train.library = *m;
                 },
                 [](const RunConfig& c) { return std::string(mode_name(c.train.library)); }});
    f.push_back({"mode",
                 [](RunConfig& c, std::string_view v) {
                   auto m = parse_expansion_mode(v);
                   if (!m) throw ValueError{"expected exact or approx, got '" + std::string(v) + "'"};
                   c.search.mode = *m;
                 },
                 [](const RunConfig& c) { return std::string(expansion_mode_name(c.search.mode)); }});
    f.push_back(int_field("n_expand", [](RunConfig& c) -> int& { return c.search.n_expand; }, 1, 10000));
    f.push_back(int_field("simulations", [](RunConfig& c) -> int& { return c.search.simulations; }, 1, kBig));
    f.push_back(int_field("nested_simulations", [](RunConfig& c) -> int& { return c.search.nested_simulations; }, 1,
                          kBig));
    f.push_back(double_field("c_puct", [](RunConfig& c) -> double& { return c.search.c_puct; }, 0.0, 1e6));
    f.push_back(double_field("dirichlet_alpha", [](RunConfig& c) -> double& { return c.search.dirichlet_alpha; }, 0.0,
                             1e6, true));
    f.push_back(double_field("dirichlet_weight", [](RunConfig& c) -> double& { return c.search.dirichlet_weight; },
                             0.0, 1.0));
    f.push_back(double_field("temperature", [](RunConfig& c) -> double& { return c.search.temperature; }, 0.0, 1e6));
    f.push_back(bool_field("cache_recursion", [](RunConfig& c) -> bool& { return c.search.cache_recursion; }));
    f.push_back(int_field("cap_partition_update", [](RunConfig& c) -> int& { return c.search.caps.partition_update; },
                          1, kBig));
    f.push_back(int_field("cap_partition_offset", [](RunConfig& c) -> int& { return c.search.caps.partition_offset; },
                          1, kBig));
    f.push_back(int_field("cap_quicksort_update", [](RunConfig& c) -> int& { return c.search.caps.quicksort_update; },
                          1, kBig));
    f.push_back(int_field("cap_quicksort_offset", [](RunConfig& c) -> int& { return c.search.caps.quicksort_offset; },
                          1, kBig));
    f.push_back(int_field("episodes_per_iteration",
                          [](RunConfig& c) -> int& { return c.train.episodes_per_iteration; }, 1, kBig));
    f.push_back(int_field("batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }, 1, kBig));
    f.push_back(int_field("iterations", [](RunConfig& c) -> int& { return c.train.iterations; }, 1, kBig));
    f.push_back(int_field("gradient_steps", [](RunConfig& c) -> int& { return c.train.gradient_steps; }, 0, kBig));
    f.push_back(double_field("epsilon", [](RunConfig& c) -> double& { return c.train.epsilon; }, 0.0, 1.0));
    f.push_back(double_field("unlock_threshold", [](RunConfig& c) -> double& { return c.train.unlock_threshold; },
                             0.0, 1.0));
    f.push_back(double_field("ema_decay", [](RunConfig& c) -> double& { return c.train.ema_decay; }, 0.0, 1.0));
    f.push_back(int_field("replay_capacity", [](RunConfig& c) -> int& { return c.train.replay_capacity; }, 1, kBig));
    f.push_back(int_field("failed_capacity", [](RunConfig& c) -> int& { return c.train.failed_capacity; }, 1, kBig));
    f.push_back(int_field("min_length", [](RunConfig& c) -> int& { return c.train.min_length; }, kMinLength,
                          kMaxLength));
    f.push_back(int_field("max_length", [](RunConfig& c) -> int& { return c.train.max_length; }, kMinLength,
                          kMaxLength));
    f.push_back({"eval_lengths",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<int> lengths;
                   try {
                     lengths = parse_int_list(v);
                   } catch (const Error& e) {
                     throw ValueError{e.what()};
                   }
                   if (lengths.empty()) throw ValueError{"expected at least one length"};
                   for (int n : lengths) {
                     if (n < kMinLength || n > kMaxLength) {
                       throw ValueError{"length " + std::to_string(n) + " out of range [2, 60]"};
                     }
                   }
                   c.train.eval_lengths = std::move(lengths);
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.train.eval_lengths.size(); ++i) {
                     if (i > 0) out += ",";
                     out += std::to_string(c.train.eval_lengths[i]);
                   }
                   return out;
                 }});
    f.push_back(int_field("eval_trials", [](RunConfig& c) -> int& { return c.train.eval_trials; }, 1, kBig));
    f.push_back({"max_task",
                 [](RunConfig& c, std::string_view v) {
                   auto t = parse_task(v);
                   if (!t) throw ValueError{"unknown task '" + std::string(v) + "'"};
                   c.train.max_task = *t;
                 },
                 [](const RunConfig& c) { return std::string(task_name(c.train.max_task)); }});
    f.push_back(bool_field("value_on_failures", [](RunConfig& c) -> bool& { return c.train.value_on_failures; }));
    f.push_back(int_field("threads", [](RunConfig& c) -> int& { return c.train.threads; }, 1, 1024));
    f.push_back(bool_field("wall_clock", [](RunConfig& c) -> bool& { return c.train.wall_clock; }));
    f.push_back(int_field("encoder_dim", [](RunConfig& c) -> int& { return c.train.encoder_dim; }, 1, 4096));
    f.push_back(int_field("embedding_dim", [](RunConfig& c) -> int& { return c.train.embedding_dim; }, 1, 4096));
    f.push_back(int_field("hidden_dim", [](RunConfig& c) -> int& { return c.train.hidden_dim; }, 1, 4096));
    f.push_back(double_field("learning_rate", [](RunConfig& c) -> double& { return c.train.adam.learning_rate; }, 0.0,
                             1.0, true));
    f.push_back(double_field("adam_beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; }, 0.0, 1.0));
    f.push_back(double_field("adam_beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; }, 0.0, 1.0));
    f.push_back(double_field("grad_clip", [](RunConfig& c) -> double& { return c.train.adam.clip_norm; }, 0.0, 1e12));
    f.push_back(double_field("log_clamp", [](RunConfig& c) -> double& { return c.train.adam.loss.log_clamp; }, 0.0,
                             1.0, true));
    f.push_back(string_field("checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; }));
    f.push_back(string_field("metrics_dir", [](RunConfig& c) -> std::string& { return c.metrics_dir; }));
    f.push_back(int_field("checkpoint_every", [](RunConfig& c) -> int& { return c.checkpoint_every; }, 0, kBig));
    f.push_back(int_field("eval_every", [](RunConfig& c) -> int& { return c.eval_every; }, 0, kBig));
    return f;
  }();
  return table;
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  std::vector<std::string> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.name == key) field = &f;
    }
    if (field == nullptr) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
    }
    seen.emplace_back(key);
    try {
      field->set(config, value);
    } catch (const ValueError& e) {
      throw ConfigError(where + std::string(key) + ": " + e.message);
    }
  }
  if (config.train.min_length > config.train.max_length) {
    throw ConfigError("min_length must not exceed max_length");
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.name + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace argprog
