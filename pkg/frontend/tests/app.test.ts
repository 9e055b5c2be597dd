/** Contract replay against the recorded case-study fixtures. */

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/app.js";
import { FakeApi, script } from "./helpers.js";

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = "<div id='app'></div>";
  root = document.getElementById("app") as HTMLElement;
});

function makeApp(fake: FakeApi): App {
  return new App(new ApiClient("", fake.fetch), root);
}

describe("case-study replay", () => {
  it("renders two clarification buttons after the ambiguous question", async () => {
    const fake = new FakeApi();
    const app = makeApp(fake);
    await app.start();
    await app.send(script().question);

    const buttons = root.querySelectorAll("button.option");
    expect(buttons).toHaveLength(2);
    expect([...buttons].map((b) => (b as HTMLElement).dataset.optionId)).toEqual([
      "shouldincome",
      "shouldincome_after",
    ]);
  });

  it("posts the picked option_id exactly once and renders the result table", async () => {
    const fake = new FakeApi();
    const app = makeApp(fake);
    await app.start();
    await app.send(script().question);

    const button = root.querySelector(
      "button.option[data-option-id='shouldincome_after']",
    ) as HTMLButtonElement;
    button.click();
    button.click(); // double click while in flight must not double-post
    await app.settle();

    const posts = fake.postedMessages();
    expect(posts).toHaveLength(2); // the question, then the option
    expect(posts[1].body).toMatchObject({ text: "shouldincome_after" });

    const cells = [...root.querySelectorAll("table.result-table td")].map(
      (td) => td.textContent,
    );
    expect(cells).toEqual(["245"]);
    expect(root.querySelector("pre.sql")?.textContent).toContain("SUM(shouldincome_after)");
  });

  it("restores an identical transcript after reload", async () => {
    const fake = new FakeApi();
    const live = makeApp(fake);
    await live.start();
    await live.send(script().question);
    const option = root.querySelector(
      "button.option[data-option-id='shouldincome_after']",
    ) as HTMLButtonElement;
    option.click();
    await live.settle();
    const liveThread = (root.querySelector(".thread") as HTMLElement).innerHTML;

    document.body.innerHTML = "<div id='app'></div>";
    const freshRoot = document.getElementById("app") as HTMLElement;
    const reloaded = new App(new ApiClient("", fake.fetch), freshRoot);
    await reloaded.start("fixture-session");
    const restoredThread = (freshRoot.querySelector(".thread") as HTMLElement).innerHTML;

    expect(restoredThread).toBe(liveThread);
  });

  it("re-fetching the transcript renders an identical thread", async () => {
    const fake = new FakeApi();
    const first = makeApp(fake);
    await first.start("fixture-session");
    const once = (root.querySelector(".thread") as HTMLElement).innerHTML;

    document.body.innerHTML = "<div id='app'></div>";
    const again = new App(
      new ApiClient("", fake.fetch),
      document.getElementById("app") as HTMLElement,
    );
    await again.start("fixture-session");
    const twice = (document.querySelector(".thread") as HTMLElement).innerHTML;
    expect(twice).toBe(once);
  });

  it("shows a retry banner when the service is unreachable", async () => {
    const fake = new FakeApi();
    fake.failing = true;
    const app = makeApp(fake);
    await app.start();
    expect(root.querySelector(".banner")?.textContent).toContain("unreachable");
    expect(root.querySelector(".thread")).not.toBeNull();
  });

  it("unscripted text renders the reject guidance, not a crash", async () => {
    const fake = new FakeApi();
    const app = makeApp(fake);
    await app.start();
    await app.send("something else entirely");
    expect(root.querySelector(".bubble.engine.reject .text")?.textContent).toBe("unscripted");
  });
});
