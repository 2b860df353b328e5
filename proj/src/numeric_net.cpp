#include "handsoff/numeric_net.hpp"

#include "handsoff/hoff.hpp"

namespace handsoff::nn {

void save_net(const std::filesystem::path& dir, const DenseNet& net, const std::string& prefix) {
    std::filesystem::create_directories(dir);
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        const auto& layer = net.layers()[l];
        const std::string base = prefix + "layer" + std::to_string(l);
        hoff::write(dir / (base + ".w.hoff"),
                    hoff::Tensor::of_floats({static_cast<std::uint32_t>(layer.weight.rows()),
                                             static_cast<std::uint32_t>(layer.weight.cols())},
                                            layer.weight.values()));
        hoff::write(dir / (base + ".b.hoff"),
                    hoff::Tensor::of_floats({static_cast<std::uint32_t>(layer.bias.size())}, layer.bias));
    }
}

DenseNet load_net(const std::filesystem::path& dir, const std::string& prefix) {
    LayerWidths widths{};
    std::array<hoff::Tensor, kLayerCount> w, b;
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        const std::string base = prefix + "layer" + std::to_string(l);
        w[l] = hoff::read(dir / (base + ".w.hoff"));
        b[l] = hoff::read(dir / (base + ".b.hoff"));
        if (w[l].dtype != hoff::DType::f32 || w[l].dims.size() != 2 || b[l].dims.size() != 1 ||
            b[l].dims[0] != w[l].dims[1]) {
            throw IoError("checkpoint " + (dir / base).string() + " has inconsistent shapes");
        }
        if (l > 0 && w[l].dims[0] != widths[l]) {
            throw IoError("checkpoint layers do not chain at layer " + std::to_string(l));
        }
        widths[l] = w[l].dims[0];
        widths[l + 1] = w[l].dims[1];
    }
    DenseNet net(widths, 0);
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        net.layers()[l].weight.values() = w[l].f32;
        net.layers()[l].bias = b[l].f32;
    }
    return net;
}

}  // namespace handsoff::nn
