// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmacos/corpus.hpp"

namespace dmacos::toy {

/// Two generators with disjoint verbs, nouns, helpers and parameter names.
enum class Family { a, b };

Family parse_family(std::string_view name);

/// Distinct synthetic methods in the demonstration language. The summary names
/// the verb and noun of the method name, so masking the name removes the verb.
/// Records carry "id", "source", "name" and "summary".
std::vector<nlohmann::ordered_json> make_records(std::size_t count, Family family, std::uint64_t seed);

std::vector<corpus::Sample> make_samples(std::size_t count, Family family, std::uint64_t seed);

}  // namespace dmacos::toy
