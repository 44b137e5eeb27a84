#pragma once

#include <iosfwd>
#include <string>

#include "sorel/mdp.hpp"

namespace sorel {

// Line-delimited JSON. The first line is a header object
//   {"env_id":..,"discrete":..,"state_dim":..,"action_dim":..,"gamma":..,
//    "max_steps":..,"behavior":..,"seed":..}
// followed by one array per transition: [s, a, r, s_next, done]. Tabular
// states/actions are integers, continuous ones are arrays of reals. Reals use
// shortest round-trip formatting so read(write(D)) == D.

void write_dataset(std::ostream& out, const Dataset& data);
void write_dataset(const std::string& path, const Dataset& data);

/// Throws DataError naming the offending line on malformed records or when a
/// record does not match the header dimensions.
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::string& path);

}  // namespace sorel
