/** Tiny DOM builders; everything goes through the owning document so the
 * console works the same mounted in a browser or in a scripted session. */

export function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document, tag: K, className = "", text = "",
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export type Scheduler = (cb: () => void, ms: number) => () => void;

export function windowScheduler(doc: Document): Scheduler {
  const win = doc.defaultView;
  if (!win) throw new Error("document is not attached to a window");
  return (cb, ms) => {
    const id = win.setTimeout(cb, ms);
    return () => win.clearTimeout(id);
  };
}
