#include "leq/nn/checkpoint.hpp"

#include "leq/binary_io.hpp"
#include "leq/errors.hpp"

namespace leq::nn {

namespace {
constexpr std::string_view kMagic = "LEQC";
}

void Checkpoint::add(std::string name, Vector values) { arrays.emplace_back(std::move(name), std::move(values)); }

const Vector& Checkpoint::get(const std::string& name) const
{
    for (const auto& [n, v] : arrays) {
        if (n == name) return v;
    }
    throw FormatError("checkpoint has no array '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const
{
    for (const auto& [n, v] : arrays) {
        if (n == name) return true;
    }
    return false;
}

std::string Checkpoint::encode() const
{
    nlohmann::json h = header;
    h["arrays"] = nlohmann::json::array();
    for (const auto& [n, v] : arrays) h["arrays"].push_back(n);
    const std::string text = h.dump();

    io::ByteWriter w;
    w.put_bytes(kMagic);
    w.put_u32(kCheckpointVersion);
    w.put_u64(text.size());
    w.put_bytes(text);
    for (const auto& [n, v] : arrays) {
        w.put_u64(static_cast<std::uint64_t>(v.size()));
        w.put_f64s(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
    }
    return io::seal_with_crc(w);
}

Checkpoint Checkpoint::decode(std::string_view bytes)
{
    io::ByteReader r(io::unseal_crc(bytes));
    if (r.get_bytes(4) != kMagic) throw FormatError("not a checkpoint file (bad magic)");
    const auto version = r.get_u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto len = r.get_u64();
    if (len > r.remaining()) throw FormatError("truncated file");
    Checkpoint ckpt;
    try {
        ckpt.header = nlohmann::json::parse(r.get_bytes(len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what());
    }
    const auto names = ckpt.header.at("arrays").get<std::vector<std::string>>();
    ckpt.header.erase("arrays");
    for (const auto& name : names) {
        const auto n = r.get_u64();
        const auto values = r.get_f64s(n);
        ckpt.add(name, Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint");
    return ckpt;
}

void Checkpoint::save(const std::string& path) const { io::write_file(path, encode()); }

Checkpoint Checkpoint::load(const std::string& path) { return decode(io::read_file(path)); }

Checkpoint mlp_checkpoint(const Mlp& net, std::uint64_t seed)
{
    Checkpoint ckpt;
    ckpt.header["kind"] = "mlp";
    ckpt.header["spec"] = net.spec();
    ckpt.header["layout"] = net.layout();
    ckpt.header["seed"] = seed;
    ckpt.add("params", net.params());
    return ckpt;
}

Mlp mlp_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix)
{
    const auto& h = prefix.empty() ? ckpt.header : ckpt.header.at(prefix);
    Mlp net(h.at("spec").get<MlpSpec>());
    net.set_params(ckpt.get(prefix.empty() ? "params" : prefix));
    return net;
}

void add_network(Checkpoint& ckpt, const std::string& name, const Mlp& net)
{
    ckpt.header[name] = {{"spec", net.spec()}, {"layout", net.layout()}};
    ckpt.add(name, net.params());
}

Mlp get_network(const Checkpoint& ckpt, const std::string& name) { return mlp_from_checkpoint(ckpt, name); }

}  // namespace leq::nn
