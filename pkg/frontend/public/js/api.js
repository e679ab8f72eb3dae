// Thin typed client over the /v1 endpoints; no state beyond credentials.
export class ApiError extends Error {
    constructor(status, code, message) {
        super(message);
        this.status = status;
        this.code = code;
    }
}
async function parseError(resp) {
    let code = "error";
    let message = resp.statusText;
    try {
        const body = await resp.json();
        const detail = body.detail ?? body;
        code = detail.code ?? code;
        message = detail.message ?? message;
    }
    catch {
        // non-JSON error body; keep the status text
    }
    return new ApiError(resp.status, code, message);
}
export class ApiClient {
    constructor(baseUrl, token) {
        this.baseUrl = baseUrl;
        this.token = token;
    }
    headers() {
        return {
            Authorization: `Bearer ${this.token}`,
            "Content-Type": "application/json",
        };
    }
    async get(path) {
        const resp = await fetch(`${this.baseUrl}${path}`, { headers: this.headers() });
        if (!resp.ok)
            throw await parseError(resp);
        return (await resp.json());
    }
    async auth() {
        const resp = await fetch(`${this.baseUrl}/v1/auth`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ token: this.token }),
        });
        if (!resp.ok)
            throw await parseError(resp);
        return (await resp.json());
    }
    topology() {
        return this.get("/v1/topology");
    }
    async requests() {
        const body = await this.get("/v1/requests");
        return body.requests;
    }
    request(id) {
        return this.get(`/v1/requests/${encodeURIComponent(id)}`);
    }
    measurements(id) {
        return this.get(`/v1/requests/${encodeURIComponent(id)}/measurements`);
    }
    async audit() {
        const body = await this.get("/v1/audit");
        return body.audit;
    }
    async submit(body) {
        const resp = await fetch(`${this.baseUrl}/v1/requests`, {
            method: "POST",
            headers: this.headers(),
            body: JSON.stringify(body),
        });
        if (!resp.ok)
            throw await parseError(resp);
        const out = (await resp.json());
        return out.request_id;
    }
}
