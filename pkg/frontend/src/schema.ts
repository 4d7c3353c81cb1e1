/**
 * Interpreter for the kernel's published JSON Schemas (schemas/v1/*.json).
 *
 * Implements exactly the keyword subset those files use and refuses to
 * compile anything else, so a schema revision that adds an unknown keyword
 * fails loudly here instead of silently validating nothing.
 */

export interface SchemaIssue {
  path: string;
  message: string;
}

export type Validator = (value: unknown) => SchemaIssue[];

type SchemaDoc = Record<string, unknown>;

const SUPPORTED = new Set([
  "type",
  "enum",
  "const",
  "required",
  "properties",
  "additionalProperties",
  "items",
  "minItems",
  "uniqueItems",
  "minLength",
  "minimum",
  "maximum",
  "exclusiveMinimum",
  "oneOf",
  "anyOf",
  "allOf",
  "if",
  "then",
  "else",
  "$ref",
  "$defs",
]);

const ANNOTATIONS = new Set(["$schema", "$id", "title", "description", "examples", "default"]);

function isObject(value: unknown): value is SchemaDoc {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

/** Deterministic encoding for enum/const/uniqueItems comparisons. */
function canonical(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonical).join(",")}]`;
  }
  if (isObject(value)) {
    const keys = Object.keys(value).sort();
    return `{${keys.map((k) => `${JSON.stringify(k)}:${canonical(value[k])}`).join(",")}}`;
  }
  return JSON.stringify(value);
}

function jsonType(value: unknown): string {
  if (value === null) return "null";
  if (Array.isArray(value)) return "array";
  const t = typeof value;
  if (t === "number") return "number";
  if (t === "string" || t === "boolean" || t === "object") return t;
  return "unknown";
}

function matchesType(value: unknown, wanted: string): boolean {
  if (wanted === "integer") {
    return typeof value === "number" && Number.isFinite(value) && Number.isInteger(value);
  }
  if (wanted === "number") {
    return typeof value === "number" && Number.isFinite(value);
  }
  return jsonType(value) === wanted;
}

function assertSupported(schema: unknown, where: string): void {
  if (typeof schema === "boolean") {
    throw new Error(`boolean schemas are not supported (${where})`);
  }
  if (!isObject(schema)) {
    throw new Error(`schema at ${where} is not an object`);
  }
  for (const key of Object.keys(schema)) {
    if (!SUPPORTED.has(key) && !ANNOTATIONS.has(key)) {
      throw new Error(`unsupported schema keyword ${JSON.stringify(key)} at ${where}`);
    }
  }
  const sub = (child: unknown, label: string) => assertSupported(child, `${where}/${label}`);
  const props = schema.properties;
  if (props !== undefined) {
    if (!isObject(props)) throw new Error(`properties at ${where} is not an object`);
    for (const [name, child] of Object.entries(props)) sub(child, `properties/${name}`);
  }
  const defs = schema.$defs;
  if (defs !== undefined) {
    if (!isObject(defs)) throw new Error(`$defs at ${where} is not an object`);
    for (const [name, child] of Object.entries(defs)) sub(child, `$defs/${name}`);
  }
  if (schema.items !== undefined) sub(schema.items, "items");
  for (const branch of ["oneOf", "anyOf", "allOf"] as const) {
    const arr = schema[branch];
    if (arr === undefined) continue;
    if (!Array.isArray(arr) || arr.length === 0) {
      throw new Error(`${branch} at ${where} must be a non-empty array`);
    }
    arr.forEach((child, i) => sub(child, `${branch}/${i}`));
  }
  for (const cond of ["if", "then", "else"] as const) {
    if (schema[cond] !== undefined) sub(schema[cond], cond);
  }
  const extra = schema.additionalProperties;
  if (extra !== undefined && typeof extra !== "boolean") {
    throw new Error(`only boolean additionalProperties is supported (${where})`);
  }
  const ref = schema.$ref;
  if (ref !== undefined && (typeof ref !== "string" || !ref.startsWith("#/"))) {
    throw new Error(`only local "#/" $ref pointers are supported (${where})`);
  }
}

function resolveRef(root: SchemaDoc, ref: string): SchemaDoc {
  let node: unknown = root;
  for (const raw of ref.slice(2).split("/")) {
    const key = raw.replace(/~1/g, "/").replace(/~0/g, "~");
    if (!isObject(node) || !(key in node)) {
      throw new Error(`unresolvable $ref ${ref}`);
    }
    node = node[key];
  }
  if (!isObject(node)) {
    throw new Error(`$ref ${ref} does not point at a schema object`);
  }
  return node;
}

export function compileSchema(doc: SchemaDoc): Validator {
  assertSupported(doc, "#");

  function check(value: unknown, schema: SchemaDoc, path: string, out: SchemaIssue[]): void {
    const ref = schema.$ref;
    if (typeof ref === "string") {
      check(value, resolveRef(doc, ref), path, out);
      // the schema files never put other keywords next to $ref
      return;
    }

    const wanted = schema.type;
    if (wanted !== undefined) {
      const options = Array.isArray(wanted) ? wanted : [wanted];
      if (!options.some((t) => typeof t === "string" && matchesType(value, t))) {
        out.push({ path, message: `expected ${options.join(" or ")}, got ${jsonType(value)}` });
        return; // the remaining keywords assume the right type
      }
    }

    if (Array.isArray(schema.enum)) {
      const got = canonical(value);
      if (!schema.enum.some((option) => canonical(option) === got)) {
        out.push({ path, message: `value ${got} is not one of the allowed options` });
      }
    }
    if (schema.const !== undefined && canonical(value) !== canonical(schema.const)) {
      out.push({ path, message: `value must equal ${canonical(schema.const)}` });
    }

    if (typeof value === "string") {
      const min = schema.minLength;
      if (typeof min === "number" && value.length < min) {
        out.push({ path, message: `string shorter than minLength ${min}` });
      }
    }

    if (typeof value === "number") {
      if (typeof schema.minimum === "number" && value < schema.minimum) {
        out.push({ path, message: `${value} is below minimum ${schema.minimum}` });
      }
      if (typeof schema.maximum === "number" && value > schema.maximum) {
        out.push({ path, message: `${value} exceeds maximum ${schema.maximum}` });
      }
      if (typeof schema.exclusiveMinimum === "number" && value <= schema.exclusiveMinimum) {
        out.push({ path, message: `${value} must be greater than ${schema.exclusiveMinimum}` });
      }
    }

    if (Array.isArray(value)) {
      const minItems = schema.minItems;
      if (typeof minItems === "number" && value.length < minItems) {
        out.push({ path, message: `array has ${value.length} items, needs at least ${minItems}` });
      }
      if (schema.uniqueItems === true) {
        const seen = new Set<string>();
        value.forEach((item, i) => {
          const key = canonical(item);
          if (seen.has(key)) {
            out.push({ path: `${path}[${i}]`, message: "duplicate array item" });
          }
          seen.add(key);
        });
      }
      if (isObject(schema.items)) {
        value.forEach((item, i) => check(item, schema.items as SchemaDoc, `${path}[${i}]`, out));
      }
    }

    if (isObject(value)) {
      if (Array.isArray(schema.required)) {
        for (const name of schema.required) {
          if (typeof name === "string" && !(name in value)) {
            out.push({ path, message: `missing required property ${JSON.stringify(name)}` });
          }
        }
      }
      const props = isObject(schema.properties) ? schema.properties : {};
      if (schema.additionalProperties === false) {
        for (const name of Object.keys(value)) {
          if (!(name in props)) {
            out.push({ path, message: `unexpected property ${JSON.stringify(name)}` });
          }
        }
      }
      for (const [name, child] of Object.entries(props)) {
        if (name in value && isObject(child)) {
          check(value[name], child, `${path}.${name}`, out);
        }
      }
    }

    const passes = (sub: SchemaDoc): boolean => {
      const scratch: SchemaIssue[] = [];
      check(value, sub, path, scratch);
      return scratch.length === 0;
    };

    if (Array.isArray(schema.allOf)) {
      for (const sub of schema.allOf) {
        if (isObject(sub)) check(value, sub, path, out);
      }
    }
    if (Array.isArray(schema.anyOf)) {
      if (!schema.anyOf.some((sub) => isObject(sub) && passes(sub))) {
        out.push({ path, message: "value matches none of the anyOf shapes" });
      }
    }
    if (Array.isArray(schema.oneOf)) {
      const hits = schema.oneOf.filter((sub) => isObject(sub) && passes(sub)).length;
      if (hits !== 1) {
        out.push({ path, message: `value matches ${hits} of the oneOf shapes, need exactly 1` });
      }
    }
    if (isObject(schema.if)) {
      if (passes(schema.if)) {
        if (isObject(schema.then)) check(value, schema.then, path, out);
      } else if (isObject(schema.else)) {
        check(value, schema.else, path, out);
      }
    }
  }

  return (value: unknown) => {
    const out: SchemaIssue[] = [];
    check(value, doc, "$", out);
    return out;
  };
}

export function formatIssues(issues: SchemaIssue[]): string {
  return issues.map((issue) => `${issue.path}: ${issue.message}`).join("; ");
}
