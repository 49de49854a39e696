import { GatewayClient } from "./client.js";
import { ConsoleState } from "./state.js";
import { WebSocketTransport } from "./transport.js";
import { ConsoleUI } from "./ui.js";

const wsUrl = `ws://${window.location.host}/ws`;
const client = new GatewayClient(() => new WebSocketTransport(wsUrl));
const state = new ConsoleState();
new ConsoleUI(client, state, document);
client.connect();
