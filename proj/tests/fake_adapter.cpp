// Stand-in external classifier for tests: scores text containing "incl" high.
#include <cstdlib>
#include <iostream>
#include <string>

#include <json.hpp>

int main() {
  const char* mode = std::getenv("TRIAGE_ADAPTER_MODE");
  if (!mode) return 2;
  const std::string m = mode;
  std::string line;
  std::size_t seen = 0;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    const auto req = nlohmann::json::parse(line);
    ++seen;
    if (m == "predict") {
      const bool hit = req.at("text").get<std::string>().find("incl") != std::string::npos;
      std::cout << nlohmann::json{{"doc_id", req.at("doc_id")},
                                  {"logit0", 0.0},
                                  {"logit1", hit ? 2.0 : -2.0}}
                       .dump()
                << '\n';
    } else if (m == "train") {
      if (!req.contains("label")) return 3;
    } else {
      return 2;
    }
  }
  return m == "train" && seen == 0 ? 4 : 0;
}
