#include "fsd/cli/config.hpp"

#include <set>
#include <sstream>

#include "fsd/core/hash.hpp"
#include "toml.hpp"

namespace fsd::cli {

namespace {

Json to_json(const toml::node& node, const std::string& where) {
  if (const auto* t = node.as_table()) {
    Json out = Json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = to_json(v, where);
    return out;
  }
  if (const auto* a = node.as_array()) {
    Json out = Json::array();
    for (const auto& v : *a) out.push_back(to_json(v, where));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  throw ConfigError(where + ": dates and times are not supported in configs");
}

void to_toml(const Json& j, toml::table& out);

toml::array to_toml_array(const Json& j) {
  toml::array arr;
  for (const Json& v : j) {
    if (v.is_object()) {
      toml::table t;
      to_toml(v, t);
      arr.push_back(std::move(t));
    } else if (v.is_array()) {
      arr.push_back(to_toml_array(v));
    } else if (v.is_string()) {
      arr.push_back(v.get<std::string>());
    } else if (v.is_boolean()) {
      arr.push_back(v.get<bool>());
    } else if (v.is_number_integer()) {
      arr.push_back(v.get<std::int64_t>());
    } else if (v.is_number()) {
      arr.push_back(v.get<double>());
    } else {
      throw ConfigError("config: null values cannot be written as TOML");
    }
  }
  return arr;
}

void to_toml(const Json& j, toml::table& out) {
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      toml::table t;
      to_toml(v, t);
      out.insert(k, std::move(t));
    } else if (v.is_array()) {
      out.insert(k, to_toml_array(v));
    } else if (v.is_string()) {
      out.insert(k, v.get<std::string>());
    } else if (v.is_boolean()) {
      out.insert(k, v.get<bool>());
    } else if (v.is_number_integer()) {
      out.insert(k, v.get<std::int64_t>());
    } else if (v.is_number()) {
      out.insert(k, v.get<double>());
    } else {
      throw ConfigError("config: key '" + k + "' is null");
    }
  }
}

Json parse_toml(std::string_view text, const std::string& where) {
  try {
    return to_json(toml::parse(text, where), where);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << where << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
}

Json resolve(Json j, const std::filesystem::path& base_dir, std::set<std::filesystem::path>& stack);

Json load_file(const std::filesystem::path& file, std::set<std::filesystem::path>& stack) {
  std::error_code ec;
  const auto canonical = std::filesystem::weakly_canonical(file, ec);
  if (!std::filesystem::exists(file)) throw ConfigError("config file not found: " + file.string());
  if (!stack.insert(canonical).second) throw ConfigError("config include cycle through " + file.string());
  std::string text;
  try {
    text = read_text(file);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  Json j = resolve(parse_toml(text, file.string()), file.parent_path(), stack);
  stack.erase(canonical);
  return j;
}

Json resolve(Json j, const std::filesystem::path& base_dir, std::set<std::filesystem::path>& stack) {
  if (!j.contains("include")) return j;
  std::vector<std::string> includes;
  const Json inc = j["include"];
  j.erase("include");
  if (inc.is_string()) {
    includes.push_back(inc.get<std::string>());
  } else if (inc.is_array()) {
    for (const Json& v : inc) {
      if (!v.is_string()) throw ConfigError("config: include entries must be strings");
      includes.push_back(v.get<std::string>());
    }
  } else {
    throw ConfigError("config: include must be a string or an array of strings");
  }
  Json base = Json::object();
  for (const std::string& path : includes) base = merge(std::move(base), load_file(base_dir / path, stack));
  return merge(std::move(base), j);
}

}  // namespace

Json merge(Json base, const Json& over) {
  if (!base.is_object() || !over.is_object()) return over;
  for (const auto& [k, v] : over.items()) {
    if (base.contains(k) && base[k].is_object() && v.is_object())
      base[k] = merge(std::move(base[k]), v);
    else
      base[k] = v;
  }
  return base;
}

Config::Config(Json root) : root_(std::move(root)) {
  if (!root_.is_object()) throw ConfigError("config root must be a table");
  if (root_.contains("include")) throw ConfigError("config: unresolved include in a resolved configuration");
}

Config Config::load(const std::filesystem::path& file) {
  std::set<std::filesystem::path> stack;
  return Config(load_file(file, stack));
}

Config Config::parse(std::string_view toml_text, const std::filesystem::path& base_dir) {
  std::set<std::filesystem::path> stack;
  return Config(resolve(parse_toml(toml_text, "<config>"), base_dir, stack));
}

std::string Config::to_toml() const {
  toml::table t;
  cli::to_toml(root_, t);
  std::ostringstream out;
  out << t << "\n";
  return out.str();
}

std::string Config::hash() const { return sha256_hex(root_.dump()); }

const Json* Config::find(std::string_view dotted) const {
  const Json* node = &root_;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &(*node)[key];
    if (dot == std::string_view::npos) return node;
    start = dot + 1;
  }
}

bool Config::has(std::string_view dotted) const { return find(dotted) != nullptr; }

void Config::set(std::string_view dotted, Json value) {
  Json* node = &root_;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (dot == std::string_view::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    Json& child = (*node)[key];
    if (child.is_null()) child = Json::object();
    if (!child.is_object()) throw ConfigError("config: '" + key + "' is not a table");
    node = &child;
    start = dot + 1;
  }
}

}  // namespace fsd::cli
