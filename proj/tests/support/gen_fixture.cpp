// Writes the synthetic economy as a generic-schema CSV.
#include "fixtures.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Synthetic economy fixture generator"};
  txg::fixture::EconomyParams p;
  std::string out;
  app.add_option("--out", out, "Output CSV")->required();
  app.add_option("--transactions", p.transactions);
  app.add_option("--accounts", p.accounts);
  app.add_option("--illicit-rate", p.illicit_rate);
  app.add_option("--seed", p.seed);
  CLI11_PARSE(app, argc, argv);
  std::ofstream f(out, std::ios::binary);
  txg::write_generic_csv(txg::fixture::synthetic_economy(p), f);
  return f ? 0 : 1;
}
