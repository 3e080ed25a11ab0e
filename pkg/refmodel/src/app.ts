import express, { Express, Request, Response } from "express";

import { PolicyConfig, UnknownFeatureError, act } from "./policy";

/** Wire request the engine POSTs to /act. */
interface ActRequest {
  env: string;
  window_start: number;
  features: Record<string, number>;
}

function parseActRequest(body: unknown): ActRequest | null {
  if (typeof body !== "object" || body === null) {
    return null;
  }
  const doc = body as Record<string, unknown>;
  if (typeof doc.env !== "string" || typeof doc.window_start !== "number") {
    return null;
  }
  if (typeof doc.features !== "object" || doc.features === null ||
      Array.isArray(doc.features)) {
    return null;
  }
  const features: Record<string, number> = {};
  for (const [name, value] of Object.entries(doc.features)) {
    if (typeof value !== "number" || !Number.isFinite(value)) {
      return null;
    }
    features[name] = value;
  }
  return { env: doc.env, window_start: doc.window_start, features };
}

export function createApp(config: PolicyConfig): Express {
  const app = express();
  app.use(express.json());

  app.get("/health", (_req: Request, res: Response) => {
    res.status(200).json({ status: "ok" });
  });

  app.post("/act", (req: Request, res: Response) => {
    const request = parseActRequest(req.body);
    if (request === null) {
      res.status(400).json({ error: "malformed request" });
      return;
    }
    try {
      res.status(200).json({ action: act(config, request.features) });
    } catch (err) {
      if (err instanceof UnknownFeatureError) {
        res.status(422).json({ error: err.message });
        return;
      }
      throw err;
    }
  });

  return app;
}
