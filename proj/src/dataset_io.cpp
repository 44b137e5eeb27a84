#include "sorel/dataset_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sorel {

using nlohmann::json;

namespace {

json encode_point(const Vec& v, bool discrete) {
  if (discrete) return static_cast<long>(v[0]);
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vec decode_point(const json& j, bool discrete, int dim, std::size_t line, const char* field) {
  auto fail = [&](const std::string& why) {
    std::ostringstream msg;
    msg << "line " << line << ": field '" << field << "' " << why;
    throw DataError(msg.str());
  };
  if (discrete) {
    if (!j.is_number_integer()) fail("must be an integer index");
    const long idx = j.get<long>();
    if (idx < 0 || idx >= dim) fail("index out of range");
    return Vec::Constant(1, static_cast<double>(idx));
  }
  if (!j.is_array()) fail("must be an array");
  if (static_cast<int>(j.size()) != dim) fail("has the wrong dimension");
  Vec v(dim);
  for (int i = 0; i < dim; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) fail("must contain numbers");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data) {
  const auto& h = data.header;
  json header = {{"env_id", h.env_id},       {"discrete", h.discrete}, {"state_dim", h.state_dim},
                 {"action_dim", h.action_dim}, {"gamma", h.gamma},     {"max_steps", h.max_steps},
                 {"behavior", h.behavior},   {"seed", h.seed}};
  out << header.dump() << '\n';
  for (const auto& t : data.transitions) {
    json rec = json::array({encode_point(t.s, h.discrete), encode_point(t.a, h.discrete), t.r,
                            encode_point(t.s_next, h.discrete), t.done});
    out << rec.dump() << '\n';
  }
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_dataset(out, data);
  if (!out) throw DataError("failed writing '" + path + "'");
}

Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string line;
  if (!std::getline(in, line)) throw DataError("line 1: missing dataset header");
  try {
    const json h = json::parse(line);
    data.header.env_id = h.at("env_id").get<std::string>();
    data.header.discrete = h.at("discrete").get<bool>();
    data.header.state_dim = h.at("state_dim").get<int>();
    data.header.action_dim = h.at("action_dim").get<int>();
    data.header.gamma = h.at("gamma").get<double>();
    data.header.max_steps = h.at("max_steps").get<int>();
    data.header.behavior = h.value("behavior", std::string());
    data.header.seed = h.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw DataError(std::string("line 1: bad header: ") + e.what());
  }
  if (data.header.state_dim < 1 || data.header.action_dim < 1) {
    throw DataError("line 1: dimensions must be positive");
  }
  const bool discrete = data.header.discrete;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!rec.is_array() || rec.size() != 5) {
      throw DataError("line " + std::to_string(lineno) + ": expected [s, a, r, s_next, done]");
    }
    if (!rec[2].is_number() || !rec[4].is_boolean()) {
      throw DataError("line " + std::to_string(lineno) + ": r must be a number, done a boolean");
    }
    Transition t;
    t.s = decode_point(rec[0], discrete, data.header.state_dim, lineno, "s");
    t.a = decode_point(rec[1], discrete, data.header.action_dim, lineno, "a");
    t.r = rec[2].get<double>();
    t.s_next = decode_point(rec[3], discrete, data.header.state_dim, lineno, "s_next");
    t.done = rec[4].get<bool>();
    if (!std::isfinite(t.r)) throw DataError("line " + std::to_string(lineno) + ": r is not finite");
    data.transitions.push_back(std::move(t));
  }
  return data;
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

}  // namespace sorel
