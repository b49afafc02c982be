#pragma once

#include <nlohmann/json.hpp>

namespace sigmus::detail {

// Invalid UTF-8 is replaced rather than thrown on; inputs come from the wild.
inline std::string dump_json(const nlohmann::json& j, int indent = -1) {
    return j.dump(indent, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace sigmus::detail
