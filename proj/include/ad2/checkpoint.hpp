#pragma once

#include <string>

#include "ad2/resample_attack.hpp"
#include "ad2/victim.hpp"

namespace ad2 {

inline constexpr const char* kSruTag = "ad2attack-sru/1";
inline constexpr const char* kVictimTag = "ad2attack-victim/1";

void save_sru(const std::string& path, const SruNetwork& net);
SruNetwork load_sru(const std::string& path);

void save_victim(const std::string& path, const ToyTracker& tracker);
ToyTracker load_victim(const std::string& path);

}  // namespace ad2
