import init, { attributeNames, parseCaption, flipCaption, FaceRenderer } from "./pkg/t2f_demo.js";

const $ = (id) => document.getElementById(id);

function draw(canvas, renderer, caption) {
  const size = renderer.size;
  const pixels = renderer.render(caption, Number($("variant").value) || 0);
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(pixels), size, size), 0, 0);
}

function guarded(fn) {
  return () => {
    $("error").textContent = "";
    try {
      fn();
    } catch (e) {
      $("error").textContent = e.message ?? String(e);
    }
  };
}

await init();
const renderer = new FaceRenderer(1);

for (const name of attributeNames()) {
  const opt = document.createElement("option");
  opt.value = opt.textContent = name;
  $("flip-attr").append(opt);
}
$("flip-attr").value = "Blond_Hair";

const parse = guarded(() => {
  const caption = $("caption").value;
  $("attrs").replaceChildren(
    ...parseCaption(caption).map((n) => Object.assign(document.createElement("li"), { textContent: n })),
  );
  draw($("face"), renderer, caption);
});

const flip = guarded(() => {
  const attr = $("flip-attr").value;
  const value = $("flip-value").value === "true";
  const flipped = flipCaption($("caption").value, attr, value);
  $("flipped-caption").textContent = flipped;
  $("flipped-label").textContent = `${attr} ${value ? "on" : "off"}`;
  draw($("flipped"), renderer, flipped);
});

$("parse").addEventListener("click", parse);
$("flip").addEventListener("click", flip);
parse();
flip();
