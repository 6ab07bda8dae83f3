#include "dcil/model.hpp"

#include <sstream>

namespace dcil {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

int parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw config_error("layer chain: bad integer '" + s + "' in token '" + where + "'");
  }
}

}  // namespace

std::vector<LayerSpec> parse_layer_chain(const std::string& chain) {
  std::vector<LayerSpec> layers;
  for (const std::string& token : split(chain, ',')) {
    if (token.empty()) throw config_error("layer chain: empty token");
    const std::vector<std::string> parts = split(token, ':');
    const std::string& kind = parts[0];
    LayerSpec ls;
    if (kind == "conv") {
      if (parts.size() < 2 || parts.size() > 5) throw config_error("layer chain: conv:<out>[:k[:stride[:pad]]]");
      ls.kind = LayerKind::Conv;
      ls.channels = parse_int(parts[1], token);
      ls.kernel = parts.size() > 2 ? parse_int(parts[2], token) : 3;
      ls.stride = parts.size() > 3 ? parse_int(parts[3], token) : 1;
      ls.pad = parts.size() > 4 ? parse_int(parts[4], token) : 0;
    } else if (kind == "linear") {
      if (parts.size() != 2) throw config_error("layer chain: linear:<units>");
      ls.kind = LayerKind::Linear;
      ls.units = parse_int(parts[1], token);
    } else if (kind == "bn") {
      ls.kind = LayerKind::BatchNorm;
    } else if (kind == "relu") {
      ls.kind = LayerKind::ReLU;
    } else if (kind == "avgpool") {
      if (parts.size() != 2) throw config_error("layer chain: avgpool:<k> (0 = global)");
      ls.kind = LayerKind::AvgPool;
      ls.kernel = parse_int(parts[1], token);
    } else if (kind == "flatten") {
      ls.kind = LayerKind::Flatten;
    } else if (kind == "classifier") {
      ls.kind = LayerKind::Classifier;
    } else {
      throw config_error("layer chain: unknown layer kind '" + kind + "'");
    }
    layers.push_back(ls);
  }
  if (layers.empty()) throw config_error("layer chain: no layers");
  return layers;
}

std::string model_preset(const std::string& name) {
  if (name == "mnist_cnn") {
    return "conv:12:3:2:1,bn,relu,conv:24:3:2:1,bn,relu,conv:48:3:2:1,bn,relu,conv:48:3:1:1,bn,relu,"
           "avgpool:0,classifier";
  }
  if (name == "mnist_mlp") return "flatten,linear:64,relu,classifier";
  if (name == "cifar_cnn") {
    return "conv:16:3:1:1,bn,relu,avgpool:2,conv:32:3:1:1,bn,relu,avgpool:2,conv:64:3:2:1,bn,relu,"
           "avgpool:0,classifier";
  }
  throw config_error("unknown model preset '" + name + "' (expected mnist_cnn, mnist_mlp or cifar_cnn)");
}

}  // namespace dcil
