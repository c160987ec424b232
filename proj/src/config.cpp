#include "s4t/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "s4t/error.hpp"
#include "s4t/io.hpp"
#include "s4t/metrics.hpp"

namespace s4t {

const char* to_string(OracleMode mode) {
  switch (mode) {
    case OracleMode::off: return "off";
    case OracleMode::perfect: return "perfect";
    case OracleMode::noisy: return "noisy";
  }
  return "?";
}

OracleMode parse_oracle_mode(const std::string& text) {
  if (text == "off") return OracleMode::off;
  if (text == "perfect") return OracleMode::perfect;
  if (text == "noisy") return OracleMode::noisy;
  throw ConfigError("unknown oracle mode '" + text + "' (expected off, perfect or noisy)");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("invalid value '" + text + "' for " + key);
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key + " (use true/false)");
}

struct Field {
  std::function<void(Config&, const std::string&, const std::string&)> parse;
  std::function<std::string(const Config&)> format;
};

template <typename T>
Field number(T Config::*member) {
  return {[member](Config& c, const std::string& k, const std::string& v) { c.*member = parse_number<T>(k, v); },
          [member](const Config& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

Field flag(bool Config::*member) {
  return {[member](Config& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); },
          [member](const Config& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field text(std::string Config::*member) {
  return {[member](Config& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const Config& c) { return c.*member; }};
}

template <typename E, typename Parse>
Field choice(E Config::*member, Parse parse) {
  return {[member, parse](Config& c, const std::string&, const std::string& v) { c.*member = parse(v); },
          [member](const Config& c) { return std::string(to_string(c.*member)); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", number(&Config::seed)},
      {"data_seed", number(&Config::data_seed)},
      {"num_source", number(&Config::num_source)},
      {"num_target", number(&Config::num_target)},
      {"source_manifest", text(&Config::source_manifest)},
      {"target_manifest", text(&Config::target_manifest)},
      {"eval_manifest", text(&Config::eval_manifest)},
      {"checkpoint", text(&Config::checkpoint)},
      {"source_epochs", number(&Config::source_epochs)},
      {"source_lr", number(&Config::source_lr)},
      {"source_batch_size", number(&Config::source_batch_size)},
      {"flip", flag(&Config::flip)},
      {"K", number(&Config::K)},
      {"alpha", number(&Config::alpha)},
      {"beta", number(&Config::beta)},
      {"eta", number(&Config::eta)},
      {"k", number(&Config::k)},
      {"weight_decay", number(&Config::weight_decay)},
      {"Q", number(&Config::Q)},
      {"epochs", number(&Config::epochs)},
      {"lr", number(&Config::lr)},
      {"batch_size", number(&Config::batch_size)},
      {"scope", choice(&Config::scope, parse_scope)},
      {"selection_mode", choice(&Config::selection_mode, parse_selection_mode)},
      {"ie_reg", flag(&Config::ie_reg)},
      {"confidence", flag(&Config::confidence)},
      {"consistency", flag(&Config::consistency)},
      {"loss_weights", flag(&Config::loss_weights)},
      {"interpolation", flag(&Config::interpolation)},
      {"oracle", choice(&Config::oracle, parse_oracle_mode)},
      {"oracle_p", number(&Config::oracle_p)},
      {"loss", choice(&Config::loss, parse_loss_kind)},
      {"analysis", flag(&Config::analysis)},
      {"eval_scales", text(&Config::eval_scales)},
      {"eval_batch_size", number(&Config::eval_batch_size)},
  };
  return table;
}

}  // namespace

std::vector<std::string> Config::keys() {
  std::vector<std::string> out;
  for (const auto& [name, f] : fields()) out.push_back(name);
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.parse(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void Config::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      set_assignment(t);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void Config::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(num_source >= 1 && num_target >= 1, "num_source and num_target must be at least 1");
  require(source_epochs >= 1, "source_epochs must be at least 1");
  require(source_lr > 0.0, "source_lr must be positive");
  require(source_batch_size >= 1, "source_batch_size must be at least 1");
  require(K > 0.0 && K <= 100.0, "K must be in (0, 100]");
  require(alpha >= 0.0, "alpha must be non-negative");
  require(beta >= 0.0, "beta must be non-negative");
  require(eta >= 0.0 && eta < 1.0, "eta must be in [0, 1)");
  require(k >= 3 && k % 2 == 1, "k must be odd and at least 3");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(Q >= 1, "Q must be at least 1");
  require(epochs >= 1, "epochs must be at least 1");
  require(lr > 0.0, "lr must be positive");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(oracle_p >= 0 && oracle_p <= 100, "oracle_p must be in [0, 100]");
  require(eval_batch_size >= 1, "eval_batch_size must be at least 1");
  parse_scales(eval_scales, 64, 64);
}

std::vector<std::pair<std::string, std::string>> Config::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, f] : fields()) out.push_back({name, f.format(*this)});
  return out;
}

std::string Config::to_text() const {
  std::string s;
  for (const auto& [k, v] : entries()) s += k + " = " + v + "\n";
  return s;
}

void Config::save(const std::filesystem::path& path) const {
  const std::string s = to_text();
  write_file_bytes(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::vector<std::pair<std::size_t, std::size_t>> parse_scales(const std::string& text, std::size_t H, std::size_t W) {
  if (text == "native") return {{H, W}};
  if (text == "multi") return default_scales(H, W);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("invalid eval scale '" + item + "' (expected HxW)");
    const auto h = parse_number<std::size_t>("eval_scales", item.substr(0, x));
    const auto w = parse_number<std::size_t>("eval_scales", item.substr(x + 1));
    if (h < 8 || w < 8) throw ConfigError("eval scales must be at least 8x8");
    out.push_back({h, w});
  }
  if (out.empty()) throw ConfigError("eval_scales lists no scale");
  return out;
}

}  // namespace s4t
