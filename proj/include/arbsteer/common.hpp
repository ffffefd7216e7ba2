#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace arbsteer {

/// Raised when a caller violates an operation's contract (bad shapes, missing
/// upstream artifacts, out-of-range indices). The CLI maps it to exit code 2.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#ifdef ARBSTEER_DOUBLE
using Real = double;
#else
using Real = float;
#endif

enum class Mode : std::uint8_t { IC = 0, RC = 1 };
enum class Topology : std::uint8_t { QueryFirst = 0, ContextFirst = 1 };
enum class Location : std::uint8_t { Subj = 0, ObjCf = 1, Last = 2 };
enum class Regime : std::uint8_t { CopyToRecall = 0, RecallToCopy = 1 };
enum class Domain : std::uint8_t { Same = 0, Different = 1 };
enum class Tier : std::uint8_t { High = 0, Low = 1 };

inline constexpr std::array<Location, 3> kAllLocations{Location::Subj, Location::ObjCf,
                                                        Location::Last};

inline std::string_view to_string(Mode m) { return m == Mode::IC ? "IC" : "RC"; }
inline std::string_view to_string(Topology t) {
  return t == Topology::QueryFirst ? "QueryFirst" : "ContextFirst";
}
inline std::string_view to_string(Location l) {
  switch (l) {
    case Location::Subj: return "subj";
    case Location::ObjCf: return "obj_cf";
    case Location::Last: return "last";
  }
  return "?";
}
inline std::string_view to_string(Regime r) {
  return r == Regime::CopyToRecall ? "CopyToRecall" : "RecallToCopy";
}
inline std::string_view to_string(Domain d) { return d == Domain::Same ? "same" : "different"; }
inline std::string_view to_string(Tier t) { return t == Tier::High ? "High" : "Low"; }

template <class E>
E parse_enum(std::string_view s);

template <>
inline Mode parse_enum<Mode>(std::string_view s) {
  if (s == "IC") return Mode::IC;
  if (s == "RC") return Mode::RC;
  throw ContractError("unknown mode '" + std::string(s) + "'");
}
template <>
inline Topology parse_enum<Topology>(std::string_view s) {
  if (s == "QueryFirst" || s == "qf") return Topology::QueryFirst;
  if (s == "ContextFirst" || s == "cf") return Topology::ContextFirst;
  throw ContractError("unknown topology '" + std::string(s) + "'");
}
template <>
inline Location parse_enum<Location>(std::string_view s) {
  if (s == "subj") return Location::Subj;
  if (s == "obj_cf" || s == "obj") return Location::ObjCf;
  if (s == "last") return Location::Last;
  throw ContractError("unknown location '" + std::string(s) + "'");
}
template <>
inline Regime parse_enum<Regime>(std::string_view s) {
  if (s == "CopyToRecall" || s == "c2r") return Regime::CopyToRecall;
  if (s == "RecallToCopy" || s == "r2c") return Regime::RecallToCopy;
  throw ContractError("unknown regime '" + std::string(s) + "'");
}
template <>
inline Domain parse_enum<Domain>(std::string_view s) {
  if (s == "same") return Domain::Same;
  if (s == "different") return Domain::Different;
  throw ContractError("unknown domain '" + std::string(s) + "'");
}
template <>
inline Tier parse_enum<Tier>(std::string_view s) {
  if (s == "High") return Tier::High;
  if (s == "Low") return Tier::Low;
  throw ContractError("unknown tier '" + std::string(s) + "'");
}

}  // namespace arbsteer
