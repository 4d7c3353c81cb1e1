import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { compileSchema, type Validator } from "../src/schema.js";
import { parseEventLog, type EventDoc } from "../src/wire.js";

const HERE = dirname(fileURLToPath(import.meta.url));

/** Kernel repository root; the console package lives one level below it. */
export const REPO_ROOT = join(HERE, "..", "..");

export function loadFixtureLog(name: string): EventDoc[] {
  return parseEventLog(readFileSync(join(HERE, "fixtures", name), "utf-8"));
}

export function loadSchema(name: string): Record<string, unknown> {
  const path = join(REPO_ROOT, "schemas", "v1", name);
  return JSON.parse(readFileSync(path, "utf-8")) as Record<string, unknown>;
}

export function eventValidator(): Validator {
  return compileSchema(loadSchema("event.json"));
}

export function requirementOf(log: EventDoc[]): string {
  const first = log[0];
  if (first === undefined || first.kind !== "message") {
    throw new Error("fixture log does not start with the requirement chat");
  }
  const payload = first.body.payload as Record<string, unknown>;
  return payload.text as string;
}
