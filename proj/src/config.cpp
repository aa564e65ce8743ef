#include "dgnn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dgnn/evaluation.hpp"

namespace dgnn::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("invalid value for " + std::string(key) + ": '" +
                      std::string(value) + "'");
  }
  return out;
}

std::vector<std::size_t> parse_cutoffs(std::string_view value) {
  std::vector<std::size_t> out;
  while (!value.empty()) {
    const auto comma = value.find(',');
    out.push_back(parse_number<std::size_t>("cutoffs", trim(value.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    value.remove_prefix(comma + 1);
  }
  return out;
}

void apply(RunConfig& c, std::string_view key, std::string_view value) {
  auto& t = c.training;
  if (key == "interactions") c.interactions = std::string(value);
  else if (key == "social") c.social = std::string(value);
  else if (key == "item_relations") c.item_relations = std::string(value);
  else if (key == "out") c.out = std::string(value);
  else if (key == "users") c.users = parse_number<std::uint32_t>(key, value);
  else if (key == "items") c.items = parse_number<std::uint32_t>(key, value);
  else if (key == "relations") c.relations = parse_number<std::uint32_t>(key, value);
  else if (key == "dim") t.dim = parse_number<std::uint32_t>(key, value);
  else if (key == "layers") t.layers = parse_number<std::uint32_t>(key, value);
  else if (key == "memory_units") t.memory_units = parse_number<std::uint32_t>(key, value);
  else if (key == "lr") t.lr = parse_number<double>(key, value);
  else if (key == "batch") t.batch_size = parse_number<std::uint32_t>(key, value);
  else if (key == "lambda") t.lambda = parse_number<double>(key, value);
  else if (key == "epochs") t.epochs = parse_number<std::uint32_t>(key, value);
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "threads") t.threads = parse_number<std::size_t>(key, value);
  else if (key == "cutoffs") c.cutoffs = parse_cutoffs(value);
  else if (key == "variant") c.variant = std::string(value);
  else if (key == "eval_every") c.eval_every = parse_number<std::uint32_t>(key, value);
  else throw ConfigError("unknown key '" + std::string(key) + "'");
}

}  // namespace

bool RunConfig::operator==(const RunConfig& o) const {
  const auto& a = training;
  const auto& b = o.training;
  return interactions == o.interactions && social == o.social &&
         item_relations == o.item_relations && out == o.out &&
         users == o.users && items == o.items && relations == o.relations &&
         a.dim == b.dim && a.layers == b.layers &&
         a.memory_units == b.memory_units && a.lr == b.lr &&
         a.batch_size == b.batch_size && a.lambda == b.lambda &&
         a.epochs == b.epochs && a.seed == b.seed && a.threads == b.threads &&
         cutoffs == o.cutoffs && variant == o.variant &&
         eval_every == o.eval_every;
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      apply(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_config(const RunConfig& c) {
  const auto& t = c.training;
  std::ostringstream out;
  out << "interactions = " << c.interactions.string() << '\n'
      << "social = " << c.social.string() << '\n'
      << "item_relations = " << c.item_relations.string() << '\n'
      << "out = " << c.out.string() << '\n'
      << "users = " << c.users << '\n'
      << "items = " << c.items << '\n'
      << "relations = " << c.relations << '\n'
      << "dim = " << t.dim << '\n'
      << "layers = " << t.layers << '\n'
      << "memory_units = " << t.memory_units << '\n'
      << "lr = " << eval::format_double(t.lr) << '\n'
      << "batch = " << t.batch_size << '\n'
      << "lambda = " << eval::format_double(t.lambda) << '\n'
      << "epochs = " << t.epochs << '\n'
      << "seed = " << t.seed << '\n'
      << "threads = " << t.threads << '\n'
      << "cutoffs = ";
  for (std::size_t i = 0; i < c.cutoffs.size(); ++i) {
    out << (i ? "," : "") << c.cutoffs[i];
  }
  out << '\n'
      << "variant = " << c.variant << '\n'
      << "eval_every = " << c.eval_every << '\n';
  return out.str();
}

void validate(const RunConfig& c) {
  try {
    c.training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!eval::parse_ablation(c.variant)) {
    throw ConfigError("invalid config: unknown variant '" + c.variant + "'");
  }
  if (c.cutoffs.empty()) throw ConfigError("invalid config: cutoffs must not be empty");
  for (std::size_t n : c.cutoffs) {
    if (n == 0) throw ConfigError("invalid config: cutoffs must be >= 1");
  }
  if (c.interactions.empty()) {
    throw ConfigError("invalid config: interactions path is required");
  }
  for (const auto* p : {&c.interactions, &c.social, &c.item_relations}) {
    if (!p->empty() && !std::filesystem::exists(*p)) {
      throw ConfigError("input file not found: " + p->string());
    }
  }
}

}  // namespace dgnn::config
