#include "dbr/masking.hpp"

#include <stdexcept>

namespace dbr {

std::vector<int> hard_mask(const std::vector<int>& ids, const std::vector<int>& indices) {
    std::vector<int> out = ids;
    for (int i : indices) {
        if (i < 0 || i >= static_cast<int>(ids.size()))
            throw std::invalid_argument("hard_mask: index " + std::to_string(i) +
                                        " outside sequence of length " + std::to_string(ids.size()));
        if (ids[i] < kNumReserved && ids[i] != kMaskId)
            throw std::invalid_argument("hard_mask: position " + std::to_string(i) +
                                        " holds reserved token id " + std::to_string(ids[i]));
        out[i] = kMaskId;
    }
    return out;
}

MaskDecision soft_mask(const std::vector<int>& ids, const std::vector<int>& indices, double s2_hat,
                       uint64_t seed, int epoch, const std::string& example_id) {
    if (!(s2_hat >= 0.0 && s2_hat <= 1.0))
        throw std::invalid_argument("soft_mask: normalized shortcut degree " + std::to_string(s2_hat) +
                                    " outside [0, 1] (example '" + example_id + "')");
    MaskDecision d;
    d.example_id = example_id;
    d.epoch = epoch;
    d.masked = keyed_uniform(seed, epoch, example_id) < s2_hat;
    d.ids = d.masked ? hard_mask(ids, indices) : ids;
    return d;
}

}  // namespace dbr
