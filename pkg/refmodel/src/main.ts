import { readFileSync } from "fs";

import { createApp } from "./app";
import { parsePolicyConfig } from "./policy";

function argValue(flag: string): string | undefined {
  const idx = process.argv.indexOf(flag);
  return idx >= 0 ? process.argv[idx + 1] : undefined;
}

function main(): void {
  const configPath = argValue("--config");
  if (!configPath) {
    console.error("usage: refmodel --config <policy.json> [--port N]");
    process.exit(2);
  }
  const port = Number(argValue("--port") ?? "9000");
  let config;
  try {
    config = parsePolicyConfig(JSON.parse(readFileSync(configPath, "utf-8")));
  } catch (err) {
    console.error(`policy config error: ${(err as Error).message}`);
    process.exit(2);
  }
  const app = createApp(config);
  app.listen(port, () => {
    console.log(`refmodel listening on :${port}`);
  });
}

main();
