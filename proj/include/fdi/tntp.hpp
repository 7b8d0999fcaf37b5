#pragma once

#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fdi/network.hpp"

namespace fdi {

struct TntpParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_number(const std::string& tok, int line_no, const char* what) {
  try {
    size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw TntpParseError("TNTP line " + std::to_string(line_no) + ": bad " + what +
                         " '" + tok + "'");
  }
}

/// Reads `<TAG> value` metadata lines up to <END OF METADATA>.
/// Returns (tag -> raw value) pairs; advances line counter.
inline std::vector<std::pair<std::string, std::string>> read_metadata(
    std::istream& in, int& line_no) {
  std::vector<std::pair<std::string, std::string>> meta;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = strip(line);
    if (s.empty() || s[0] == '~') continue;
    if (s[0] != '<')
      throw TntpParseError("TNTP line " + std::to_string(line_no) +
                           ": expected <TAG> metadata, got '" + s + "'");
    size_t close = s.find('>');
    if (close == std::string::npos)
      throw TntpParseError("TNTP line " + std::to_string(line_no) +
                           ": unterminated metadata tag");
    std::string tag = s.substr(1, close - 1);
    std::string value = strip(s.substr(close + 1));
    if (tag == "END OF METADATA") return meta;
    meta.emplace_back(tag, value);
  }
  throw TntpParseError("TNTP: missing <END OF METADATA>");
}

inline int metadata_int(const std::vector<std::pair<std::string, std::string>>& meta,
                        const std::string& tag) {
  for (const auto& [k, v] : meta)
    if (k == tag) {
      try {
        return std::stoi(v);
      } catch (const std::exception&) {
        throw TntpParseError("TNTP: bad value for <" + tag + ">: '" + v + "'");
      }
    }
  return -1;
}

}  // namespace detail

/// Parses a TNTP network file. Node ids in the file are 1-based; internal
/// ids are 0-based in file order 1..N.
inline RoadNetwork load_tntp_net(std::istream& in) {
  int line_no = 0;
  auto meta = detail::read_metadata(in, line_no);
  const int n_nodes = detail::metadata_int(meta, "NUMBER OF NODES");
  if (n_nodes <= 0) throw TntpParseError("TNTP: missing or bad <NUMBER OF NODES>");

  RoadNetwork net(n_nodes);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = detail::strip(line);
    if (s.empty() || s[0] == '~') continue;
    // rows end with ';'
    if (!s.empty() && s.back() == ';') s.pop_back();
    std::istringstream row(s);
    std::vector<std::string> tok;
    std::string t;
    while (row >> t) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() < 7)
      throw TntpParseError("TNTP line " + std::to_string(line_no) +
                           ": link row needs at least 7 fields, got " +
                           std::to_string(tok.size()));
    const int tail = static_cast<int>(detail::parse_number(tok[0], line_no, "init node"));
    const int head = static_cast<int>(detail::parse_number(tok[1], line_no, "term node"));
    EdgeAttr attr;
    attr.capacity = detail::parse_number(tok[2], line_no, "capacity");
    // tok[3] is length (unused)
    detail::parse_number(tok[3], line_no, "length");
    attr.free_flow_time = detail::parse_number(tok[4], line_no, "free flow time");
    attr.b = detail::parse_number(tok[5], line_no, "B");
    attr.p = detail::parse_number(tok[6], line_no, "power");
    if (tail < 1 || tail > n_nodes || head < 1 || head > n_nodes)
      throw TntpParseError("TNTP line " + std::to_string(line_no) +
                           ": node id outside 1.." + std::to_string(n_nodes));
    try {
      net.add_edge(tail - 1, head - 1, attr);
    } catch (const std::invalid_argument& e) {
      throw TntpParseError("TNTP line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return net;
}

/// Parses a TNTP trips file. Zero-flow OD pairs are skipped.
inline TripTable load_tntp_trips(std::istream& in, const RoadNetwork& net) {
  int line_no = 0;
  detail::read_metadata(in, line_no);
  TripTable table;
  int origin = -1;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = detail::strip(line);
    if (s.empty() || s[0] == '~') continue;
    if (s.rfind("Origin", 0) == 0) {
      origin = static_cast<int>(
          detail::parse_number(detail::strip(s.substr(6)), line_no, "origin id"));
      if (origin < 1 || origin > net.num_nodes())
        throw TntpParseError("TNTP line " + std::to_string(line_no) +
                             ": origin " + std::to_string(origin) +
                             " is not a network node");
      continue;
    }
    if (origin < 0)
      throw TntpParseError("TNTP line " + std::to_string(line_no) +
                           ": OD entry before any Origin block");
    // entries look like "dest : flow;" possibly several per line
    std::istringstream row(s);
    std::string entry;
    while (std::getline(row, entry, ';')) {
      entry = detail::strip(entry);
      if (entry.empty()) continue;
      size_t colon = entry.find(':');
      if (colon == std::string::npos)
        throw TntpParseError("TNTP line " + std::to_string(line_no) +
                             ": expected 'dest : flow', got '" + entry + "'");
      const int dest = static_cast<int>(detail::parse_number(
          detail::strip(entry.substr(0, colon)), line_no, "destination id"));
      const double flow = detail::parse_number(detail::strip(entry.substr(colon + 1)),
                                               line_no, "flow");
      if (dest < 1 || dest > net.num_nodes())
        throw TntpParseError("TNTP line " + std::to_string(line_no) + ": destination " +
                             std::to_string(dest) + " is not a network node");
      if (flow == 0.0) continue;
      if (flow < 0.0)
        throw TntpParseError("TNTP line " + std::to_string(line_no) +
                             ": negative flow");
      if (dest == origin)
        throw TntpParseError("TNTP line " + std::to_string(line_no) +
                             ": positive intrazonal flow " + std::to_string(origin) +
                             " -> " + std::to_string(dest));
      table.trips.push_back(Trip{origin - 1, dest - 1, flow});
    }
  }
  return table;
}

inline std::pair<RoadNetwork, TripTable> load_tntp(std::istream& net_source,
                                                   std::istream& trips_source) {
  RoadNetwork net = load_tntp_net(net_source);
  TripTable trips = load_tntp_trips(trips_source, net);
  return {std::move(net), std::move(trips)};
}

inline void save_tntp_net(const RoadNetwork& net, std::ostream& out) {
  out << "<NUMBER OF ZONES> " << net.num_nodes() << "\n";
  out << "<NUMBER OF NODES> " << net.num_nodes() << "\n";
  out << "<FIRST THRU NODE> 1\n";
  out << "<NUMBER OF LINKS> " << net.num_edges() << "\n";
  out << "<END OF METADATA>\n\n";
  out << "~\tinit node\tterm node\tcapacity\tlength\tfree flow time\tb\tpower\t"
         "speed limit\ttoll\tlink type\t;\n";
  out.precision(17);
  for (const auto& e : net.edges()) {
    out << '\t' << e.tail + 1 << '\t' << e.head + 1 << '\t' << e.attr.capacity << "\t0\t"
        << e.attr.free_flow_time << '\t' << e.attr.b << '\t' << e.attr.p
        << "\t0\t0\t1\t;\n";
  }
}

inline void save_tntp_trips(const TripTable& trips, int num_nodes, std::ostream& out) {
  out << "<NUMBER OF ZONES> " << num_nodes << "\n";
  out << "<TOTAL OD FLOW> " << trips.total_demand() << "\n";
  out << "<END OF METADATA>\n\n";
  out.precision(17);
  int last_origin = -1;
  for (const auto& t : trips.trips) {
    if (t.origin != last_origin) {
      out << "Origin " << t.origin + 1 << "\n";
      last_origin = t.origin;
    }
    out << "    " << t.destination + 1 << " : " << t.demand << ";\n";
  }
}

}  // namespace fdi
