// DOM wiring for the operator console. All physics numbers on screen come
// from gateway frames (the ConsoleState mirror); this file only moves them
// into widgets and turns widget events into protocol requests.

import { GatewayClient } from "./client.js";
import { StripChart } from "./charts.js";
import { AckFrame, StateFrame } from "./protocol.js";
import { ConsoleState, N_CHANNELS } from "./state.js";

const PAINT_INTERVAL_MS = 50; // 20 Hz, matching the telemetry batch cadence
const STALE_POLL_MS = 500;

export class ConsoleUI {
  private charts: StripChart[] = [];
  private toastBox: HTMLElement;

  constructor(
    private client: GatewayClient,
    private state: ConsoleState,
    private root: Document,
  ) {
    this.toastBox = this.el("toasts");
    this.buildCharts();
    this.wireConnectionBanner();
    this.wireConfigForm();
    this.wireControls();
    this.wireProgramEditor();
    this.wireStop();

    client.onState = (frame) => {
      this.state.applyState(frame);
      this.renderRigMirror(frame);
    };
    client.onTelemetry = (frame) => this.state.applyTelemetry(frame);
    client.onRemoteError = (frame) => this.toast(`gateway: ${frame.msg}`);

    setInterval(() => this.paint(), PAINT_INTERVAL_MS);
    setInterval(() => this.renderBanner(), STALE_POLL_MS);
  }

  // -- helpers -------------------------------------------------------------

  private el<T extends HTMLElement = HTMLElement>(id: string): T {
    const node = this.root.getElementById(id);
    if (node === null) {
      throw new Error(`missing element #${id}`);
    }
    return node as T;
  }

  private input(id: string): HTMLInputElement {
    return this.el<HTMLInputElement>(id);
  }

  private toast(message: string): void {
    const node = this.root.createElement("div");
    node.className = "toast";
    node.textContent = message;
    this.toastBox.appendChild(node);
    setTimeout(() => node.remove(), 6000);
  }

  private async guarded(button: HTMLButtonElement, action: () => Promise<unknown>): Promise<void> {
    button.disabled = true;
    try {
      await action();
    } catch (error) {
      this.toast(String((error as Error).message ?? error));
    } finally {
      button.disabled = false;
    }
  }

  // -- connection banner -----------------------------------------------------

  private wireConnectionBanner(): void {
    this.client.onStatusChange = () => this.renderBanner();
    this.renderBanner();
  }

  private renderBanner(): void {
    const banner = this.el("banner");
    const stale = this.client.isStale();
    const status = this.client.status;
    banner.className = `banner ${status}${stale ? " stale" : ""}`;
    banner.textContent =
      status === "connected"
        ? stale
          ? "connected - no data for 2 s (stale)"
          : "connected"
        : status;
    const disabled = status !== "connected";
    for (const node of Array.from(this.root.querySelectorAll("button, input, select, textarea"))) {
      if ((node as HTMLElement).dataset.alwaysOn === undefined) {
        (node as HTMLButtonElement).disabled = disabled;
      }
    }
  }

  // -- configuration panel -----------------------------------------------------

  private wireConfigForm(): void {
    const apply = this.el<HTMLButtonElement>("cfg-apply");
    apply.addEventListener("click", () => {
      this.clearFieldErrors();
      const channelIds: string[] = [];
      for (let ch = 1; ch <= N_CHANNELS; ch++) {
        channelIds.push(this.input(`cfg-ch${ch}`).value.trim());
      }
      const empty = channelIds.findIndex((c) => c.length === 0);
      if (empty >= 0) {
        this.fieldError(`cfg-ch${empty + 1}`, "channel id required");
        return;
      }
      const rate = Number(this.input("cfg-rate").value);
      if (!Number.isInteger(rate) || rate <= 0) {
        this.fieldError("cfg-rate", "rate must be a positive integer");
        return;
      }
      this.guarded(apply, async () => {
        try {
          await this.client.request("configure", {
            csv_path: this.input("cfg-path").value,
            sample_rate: rate,
            terminal_config: this.el<HTMLSelectElement>("cfg-terminal").value,
            channel_ids: channelIds,
          });
          this.toast("configuration applied");
        } catch (error) {
          this.routeConfigError(String((error as Error).message));
        }
      });
    });

    this.el<HTMLButtonElement>("daq-start").addEventListener("click", (event) =>
      this.guarded(event.target as HTMLButtonElement, () => this.client.request("daq_start")),
    );
    this.el<HTMLButtonElement>("daq-stop").addEventListener("click", (event) =>
      this.guarded(event.target as HTMLButtonElement, async () => {
        const reply = (await this.client.request("daq_stop")) as AckFrame;
        if (reply.summary !== undefined) {
          this.toast(
            `acquisition stopped: ${reply.summary.rows_written} rows, ` +
              `${reply.summary.duration.toFixed(3)} s`,
          );
        }
      }),
    );
  }

  /** Map a gateway error message onto the offending form field. */
  private routeConfigError(message: string): void {
    if (message.includes("sample_rate") || message.includes("divide")) {
      this.fieldError("cfg-rate", message);
    } else if (message.includes("channel_ids")) {
      this.fieldError("cfg-ch1", message);
    } else if (message.includes("csv_path") || message.includes("directory")) {
      this.fieldError("cfg-path", message);
    } else if (message.includes("terminal_config")) {
      this.fieldError("cfg-terminal", message);
    } else {
      this.toast(message);
    }
  }

  private fieldError(inputId: string, message: string): void {
    const slot = this.root.querySelector(`[data-error-for="${inputId}"]`);
    if (slot !== null) {
      slot.textContent = message;
    } else {
      this.toast(message);
    }
  }

  private clearFieldErrors(): void {
    for (const slot of Array.from(this.root.querySelectorAll("[data-error-for]"))) {
      slot.textContent = "";
    }
  }

  // -- regulator sliders and valve toggles ---------------------------------------

  private wireControls(): void {
    for (let ch = 1; ch <= N_CHANNELS; ch++) {
      const slider = this.input(`reg-${ch}`);
      const label = this.el(`reg-${ch}-value`);
      slider.addEventListener("input", () => {
        label.textContent = `${slider.value} kPa`;
      });
      slider.addEventListener("change", () => {
        slider.disabled = true;
        this.client
          .request("set_reg", { ch, kpa: Number(slider.value) })
          .then((reply) => {
            const warnings = (reply as AckFrame).warnings;
            if (warnings !== undefined) {
              warnings.forEach((w) => this.toast(w));
            }
          })
          .catch((error) => this.toast(String((error as Error).message)))
          .finally(() => {
            slider.disabled = false;
          });
      });
      const valve = this.input(`valve-${ch}`);
      valve.addEventListener("change", () => {
        valve.disabled = true;
        this.client
          .request("set_valve", { ch, open: valve.checked })
          .catch((error) => this.toast(String((error as Error).message)))
          .finally(() => {
            valve.disabled = false;
          });
      });
    }
  }

  // -- program editor ---------------------------------------------------------

  private wireProgramEditor(): void {
    const editor = this.el<HTMLStyleElement>("program-text") as unknown as HTMLTextAreaElement;
    const load = this.el<HTMLButtonElement>("program-load");
    const run = this.el<HTMLButtonElement>("program-run");
    const diagBox = this.el("program-diagnostics");
    run.dataset.needsLoad = "yes";

    load.addEventListener("click", () =>
      this.guarded(load, async () => {
        diagBox.textContent = "";
        const reply = (await this.client.request("load_program", {
          text: editor.value,
        })) as AckFrame;
        const diags = reply.diagnostics ?? [];
        if (diags.length === 0) {
          diagBox.textContent = "program ok";
          run.disabled = false;
          run.dataset.needsLoad = "no";
        } else {
          run.dataset.needsLoad = "yes";
          for (const d of diags) {
            const line = this.root.createElement("div");
            line.className = "diagnostic";
            line.textContent = d.line > 0 ? `${d.line}:${d.col}: ${d.message}` : d.message;
            diagBox.appendChild(line);
          }
        }
      }),
    );

    run.addEventListener("click", () =>
      this.guarded(run, () => this.client.request("run")),
    );
  }

  // -- stop -------------------------------------------------------------------

  private wireStop(): void {
    const stop = this.el<HTMLButtonElement>("stop-all");
    stop.addEventListener("click", () =>
      this.guarded(stop, async () => {
        const results = await this.client.emergencyStop();
        const failed = results.filter((r) => r.status === "rejected");
        this.toast(failed.length === 0 ? "stopped" : "stop sent (one target already idle)");
      }),
    );
  }

  // -- rendering -----------------------------------------------------------------

  private buildCharts(): void {
    for (let ch = 1; ch <= N_CHANNELS; ch++) {
      const canvas = this.el<HTMLCanvasElement>(`chart-${ch}`);
      this.charts.push(new StripChart(canvas, this.state.rings[ch - 1], `P${ch}`));
    }
  }

  private paint(): void {
    for (const chart of this.charts) {
      chart.paint();
    }
    for (let ch = 1; ch <= N_CHANNELS; ch++) {
      const stats = this.state.stats[ch - 1];
      this.el(`num-${ch}`).textContent = stats.last.toFixed(1);
      this.el(`num-${ch}-range`).textContent =
        `min ${stats.min.toFixed(1)}  max ${stats.max.toFixed(1)}  mean ${stats.mean.toFixed(1)}`;
    }
  }

  private renderRigMirror(frame: StateFrame): void {
    this.el("rig-sim-time").textContent = `${frame.sim_time.toFixed(2)} s`;
    this.el("rig-supply").textContent = frame.supply_on
      ? `on (${frame.supply_gauge_kpa.toFixed(0)} kPa)`
      : "off";
    this.el("rig-program").textContent = frame.program_running
      ? "running"
      : frame.program_loaded
        ? "loaded"
        : "none";
    this.el("rig-daq").textContent = frame.daq_active ? "recording" : "idle";
    for (let ch = 1; ch <= N_CHANNELS; ch++) {
      const slider = this.input(`reg-${ch}`);
      if (this.root.activeElement !== slider) {
        slider.value = String(frame.setpoints[ch - 1]);
        this.el(`reg-${ch}-value`).textContent = `${frame.setpoints[ch - 1]} kPa`;
      }
      const valve = this.input(`valve-${ch}`);
      if (this.root.activeElement !== valve) {
        valve.checked = frame.valves[ch - 1];
      }
    }
    const acq = frame.acquisition;
    if (this.root.activeElement?.id?.startsWith("cfg-") !== true) {
      this.input("cfg-path").value = acq.csv_path;
      this.input("cfg-rate").value = String(acq.sample_rate);
      this.el<HTMLSelectElement>("cfg-terminal").value = acq.terminal_config;
      acq.channel_ids.forEach((cid, i) => {
        this.input(`cfg-ch${i + 1}`).value = cid;
      });
    }
  }
}
