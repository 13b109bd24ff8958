#include "vana/attention.hpp"

#include <charconv>
#include <sstream>

namespace vana {

namespace {

int parse_int(std::string_view text, const char* what) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || value < 1)
    throw ValueError("hydra spec: bad " + std::string(what) + " '" + std::string(text) + "'");
  return value;
}

}  // namespace

HydraConfig parse_hydra_spec(const std::string& text) {
  HydraConfig config;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string_view group(text.data() + pos, comma - pos);
    const std::size_t x = group.find('x');
    const std::size_t colon = group.find(':');
    if (x == std::string_view::npos || colon == std::string_view::npos || colon < x)
      throw ValueError("hydra spec: expected KxD:HEADS groups, got '" + text + "'");
    HeadGroup g;
    g.spec.kernel = parse_int(group.substr(0, x), "kernel");
    g.spec.dilation = parse_int(group.substr(x + 1, colon - x - 1), "dilation");
    g.heads = parse_int(group.substr(colon + 1), "head count");
    if (g.spec.kernel % 2 == 0)
      throw ValueError("hydra spec: kernel must be odd, got " + std::to_string(g.spec.kernel));
    config.groups.push_back(g);
    if (comma == text.size()) break;
    pos = comma + 1;
  }
  if (config.groups.empty()) throw ValueError("hydra spec: empty");
  return config;
}

std::string hydra_spec_str(const HydraConfig& config) {
  std::ostringstream os;
  for (std::size_t i = 0; i < config.groups.size(); ++i) {
    if (i) os << ',';
    const auto& g = config.groups[i];
    os << g.spec.kernel << 'x' << g.spec.dilation << ':' << g.heads;
  }
  return os.str();
}

namespace {

std::uint64_t projection_macs(std::int64_t n, int d_model) {
  return 4ull * static_cast<std::uint64_t>(n) * d_model * d_model;
}

}  // namespace

CostEstimate mha_dense_cost(std::int64_t n, int d_model, int heads) {
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  CostEstimate c;
  c.macs = projection_macs(n, d_model) + 2ull * un * un * d_model;
  c.attn_state = static_cast<std::uint64_t>(heads) * un * un;
  return c;
}

CostEstimate na_cost(std::int64_t n, int d_model, int heads, int kernel) {
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t win = static_cast<std::uint64_t>(kernel) * kernel;
  CostEstimate c;
  c.macs = projection_macs(n, d_model) + 2ull * un * win * d_model;
  c.attn_state = static_cast<std::uint64_t>(heads) * un * win;
  return c;
}

CostEstimate hydra_cost(std::int64_t n, int d_model, const HydraConfig& config) {
  const int heads = config.total_heads();
  if (heads < 1 || d_model % heads != 0)
    throw ShapeError("hydra_cost: d_model " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(heads) + " heads");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t d_head = static_cast<std::uint64_t>(d_model) / heads;
  CostEstimate c;
  c.macs = projection_macs(n, d_model);
  for (const auto& g : config.groups) {
    const std::uint64_t win = static_cast<std::uint64_t>(g.spec.kernel) * g.spec.kernel;
    c.macs += 2ull * g.heads * un * win * d_head;
    c.attn_state += static_cast<std::uint64_t>(g.heads) * un * win;
  }
  return c;
}

}  // namespace vana
