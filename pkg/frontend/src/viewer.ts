// Three.js viewport: fixed topology uploaded once, vertex buffer swapped on
// every decode response.

import {
  AmbientLight,
  BufferAttribute,
  BufferGeometry,
  Color,
  DirectionalLight,
  DoubleSide,
  Mesh,
  MeshStandardMaterial,
  PerspectiveCamera,
  Scene,
  WebGLRenderer,
} from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";

export class MeshViewer {
  private scene = new Scene();
  private camera: PerspectiveCamera;
  private renderer: WebGLRenderer;
  private geometry = new BufferGeometry();
  private controls: OrbitControls;

  constructor(canvas: HTMLCanvasElement) {
    this.renderer = new WebGLRenderer({ canvas, antialias: true });
    this.scene.background = new Color(0x10141a);
    this.camera = new PerspectiveCamera(
      40,
      canvas.clientWidth / canvas.clientHeight,
      0.01,
      50,
    );
    this.camera.position.set(2.4, -2.6, 1.6);
    this.camera.up.set(0, 0, 1);
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.target.set(0, 0, 0.95);

    const sun = new DirectionalLight(0xffffff, 2.2);
    sun.position.set(3, -4, 5);
    this.scene.add(sun, new AmbientLight(0x8899bb, 0.9));

    const material = new MeshStandardMaterial({
      color: 0x7fb2d9,
      roughness: 0.55,
      metalness: 0.05,
      side: DoubleSide,
      flatShading: false,
    });
    this.scene.add(new Mesh(this.geometry, material));

    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.resizeIfNeeded(canvas);
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  private resizeIfNeeded(canvas: HTMLCanvasElement): void {
    const width = canvas.clientWidth;
    const height = canvas.clientHeight;
    if (canvas.width !== width || canvas.height !== height) {
      this.renderer.setSize(width, height, false);
      this.camera.aspect = width / height;
      this.camera.updateProjectionMatrix();
    }
  }

  setTopology(faces: number[]): void {
    this.geometry.setIndex(new BufferAttribute(new Uint32Array(faces), 1));
  }

  setVertices(vertices: number[]): void {
    const data = new Float32Array(vertices);
    this.geometry.setAttribute("position", new BufferAttribute(data, 3));
    this.geometry.computeVertexNormals();
    this.geometry.attributes.position.needsUpdate = true;
  }
}
