// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/nn/unet.hpp"

#include <algorithm>

namespace orbiter360::nn {

const std::vector<std::string>& attentionSites() {
    static const std::vector<std::string> sites = {"down0.attn", "down1.attn", "mid.attn", "up1.attn", "up0.attn"};
    return sites;
}

const std::vector<std::string>& controlTaps() {
    static const std::vector<std::string> taps = {"down0", "down1", "mid"};
    return taps;
}

const std::vector<std::string>& temporalSites() {
    static const std::vector<std::string> sites = {"mid.temporal", "up1.temporal"};
    return sites;
}

bool isAttentionSite(const std::string& id) {
    const auto& s = attentionSites();
    return std::find(s.begin(), s.end(), id) != s.end();
}

bool isControlTap(const std::string& id) {
    const auto& s = controlTaps();
    return std::find(s.begin(), s.end(), id) != s.end();
}

template class UNet<float>;
template class UNet<double>;
template class ControlNet<float>;
template class ControlNet<double>;
template class Autoencoder<float>;
template class Autoencoder<double>;

} // namespace orbiter360::nn
