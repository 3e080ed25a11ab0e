/** Fixed decision policies standing in for a trained model: no learning,
 *  identical requests always yield identical responses. */

export interface ActionSpec {
  name: string;
  min: number;
  max: number;
}

export interface BangBangPolicy {
  kind: "bang_bang";
  feature: string;
  threshold: number;
  low: number;
  high: number;
}

export interface ProportionalPolicy {
  kind: "proportional";
  feature: string;
  gain: number;
  bias: number;
}

export type Policy = BangBangPolicy | ProportionalPolicy;

export interface PolicyConfig {
  actions: ActionSpec[];
  policy: Policy;
}

export class UnknownFeatureError extends Error {
  constructor(feature: string) {
    super(`feature '${feature}' not present in request`);
  }
}

function clamp(x: number, lo: number, hi: number): number {
  return Math.min(Math.max(x, lo), hi);
}

/** Compute the action map for one request's feature map. */
export function act(
  config: PolicyConfig,
  features: Record<string, number>,
): Record<string, number> {
  const policy = config.policy;
  if (!(policy.feature in features)) {
    throw new UnknownFeatureError(policy.feature);
  }
  const x = features[policy.feature];
  const action: Record<string, number> = {};
  for (const spec of config.actions) {
    let value: number;
    if (policy.kind === "bang_bang") {
      value = x > policy.threshold ? policy.high : policy.low;
    } else {
      value = policy.gain * x + policy.bias;
    }
    action[spec.name] = clamp(value, spec.min, spec.max);
  }
  return action;
}

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

export function parsePolicyConfig(raw: unknown): PolicyConfig {
  if (typeof raw !== "object" || raw === null) {
    throw new Error("policy config must be an object");
  }
  const doc = raw as Record<string, unknown>;
  if (!Array.isArray(doc.actions) || doc.actions.length === 0) {
    throw new Error("policy config needs a non-empty actions array");
  }
  const actions: ActionSpec[] = doc.actions.map((a, i) => {
    const entry = a as Record<string, unknown>;
    if (typeof entry.name !== "string" || !isFiniteNumber(entry.min) ||
        !isFiniteNumber(entry.max) || entry.min > entry.max) {
      throw new Error(`actions[${i}] needs name, min <= max`);
    }
    return { name: entry.name, min: entry.min, max: entry.max };
  });
  const p = doc.policy as Record<string, unknown> | undefined;
  if (!p || typeof p.feature !== "string") {
    throw new Error("policy needs a kind and a feature");
  }
  if (p.kind === "bang_bang") {
    if (!isFiniteNumber(p.threshold) || !isFiniteNumber(p.low) || !isFiniteNumber(p.high)) {
      throw new Error("bang_bang needs numeric threshold, low, high");
    }
    return {
      actions,
      policy: {
        kind: "bang_bang", feature: p.feature,
        threshold: p.threshold, low: p.low, high: p.high,
      },
    };
  }
  if (p.kind === "proportional") {
    if (!isFiniteNumber(p.gain) || !isFiniteNumber(p.bias)) {
      throw new Error("proportional needs numeric gain and bias");
    }
    return {
      actions,
      policy: { kind: "proportional", feature: p.feature, gain: p.gain, bias: p.bias },
    };
  }
  throw new Error(`unknown policy kind '${String(p.kind)}'`);
}
